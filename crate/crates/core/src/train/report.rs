use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::DatasetMetrics;

/// Everything needed to reproduce and audit one run.
///
/// On disk the per-dataset metrics sit at the top level next to `overall`,
/// `config_hash` and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    #[serde(skip)]
    pub metrics: BTreeMap<String, DatasetMetrics>,
    pub overall: Option<f64>,
    pub config_hash: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    /// Augmentation and queue switches in effect.
    pub ablations: BTreeMap<String, bool>,
    pub epoch_losses: Vec<f64>,
    pub valid_f1: Vec<f64>,
    /// 1-based finetuning epoch whose weights produced the test metrics.
    pub selected_epoch: Option<usize>,
    pub extra: BTreeMap<String, Value>,
    pub source: String,
    pub wall_time_s: f64,
}

pub fn source_fingerprint() -> String {
    format!("pmq-core {}", env!("CARGO_PKG_VERSION"))
}

impl RunReport {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let ablations = BTreeMap::from([
            ("enable_time_mask".to_string(), cfg.aug.enable_time_mask),
            ("enable_freq_mask".to_string(), cfg.aug.enable_freq_mask),
            ("enable_neighbor".to_string(), cfg.aug.enable_neighbor),
            ("enable_queue".to_string(), cfg.pcl.enable_queue),
        ]);
        Self {
            command: command.to_string(),
            metrics: BTreeMap::new(),
            overall: None,
            config_hash: cfg.hash(),
            seed: cfg.train.seed,
            config: cfg.to_flat().into_iter().map(|(k, v)| (k, v.to_string())).collect(),
            ablations,
            epoch_losses: Vec::new(),
            valid_f1: Vec::new(),
            selected_epoch: None,
            extra: BTreeMap::new(),
            source: source_fingerprint(),
            wall_time_s: 0.0,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        let obj = v.as_object_mut().expect("report is an object");
        for (name, m) in &self.metrics {
            obj.insert(name.clone(), serde_json::to_value(m).expect("metrics serialize"));
        }
        v
    }
}

/// Writes `report.json` and `config.resolved` into `dir`.
pub fn write_run_files(dir: &Path, report: &RunReport, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
    let path = dir.join("report.json");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let path = dir.join("config.resolved");
    fs::write(&path, cfg.resolved()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
