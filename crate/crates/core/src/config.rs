//! Run configuration: a flat file of namespaced `key = value` pairs.
//!
//! Keys live under `data.*`, `aug.*`, `model.*`, `pcl.*` and `train.*`. A
//! config file only lists the keys it changes; everything else keeps its
//! default. `--set key=value` overrides apply on top with the same syntax. The
//! resolved config is written back as sorted `key = value` lines, which parse
//! again to the same configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::augment::MaskConfig;
use crate::data::{SplitFractions, SynthConfig};
use crate::error::{ConfigError, Error};
use crate::model::EncoderConfig;
use crate::pcl::PclConfig;
use crate::train::TrainConfig;

/// Environment variable naming the default dataset root.
pub const DATA_DIR_ENV: &str = "PMQ_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset name used as the key in metric reports.
    pub name: String,
    /// Manifest path; empty means `manifest.csv` under `$PMQ_DATA_DIR` (or `data/`).
    pub manifest: String,
    /// Per-lead z-scoring of every record on load.
    pub normalize: bool,
    pub seed: u64,
    pub num_patients: usize,
    pub trials_per_patient: usize,
    pub trial_len: usize,
    pub leads: usize,
    pub num_classes: usize,
    pub sample_len: usize,
    pub noise_std: f64,
    pub class_consistency: f64,
    pub class_amplitude: f64,
    pub phase_jitter: bool,
    pub split_train: f64,
    pub split_valid: f64,
    pub split_test: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        let f = SplitFractions::default();
        Self {
            name: "synth".into(),
            manifest: String::new(),
            normalize: true,
            seed: s.seed,
            num_patients: s.num_patients,
            trials_per_patient: s.trials_per_patient,
            trial_len: s.trial_len,
            leads: s.leads,
            num_classes: s.num_classes,
            sample_len: s.sample_len,
            noise_std: s.noise_std,
            class_consistency: s.class_consistency,
            class_amplitude: s.class_amplitude,
            phase_jitter: s.phase_jitter,
            split_train: f.train,
            split_valid: f.valid,
            split_test: f.test,
        }
    }
}

impl DataConfig {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            num_patients: self.num_patients,
            trials_per_patient: self.trials_per_patient,
            trial_len: self.trial_len,
            leads: self.leads,
            num_classes: self.num_classes,
            sample_len: self.sample_len,
            noise_std: self.noise_std,
            class_consistency: self.class_consistency,
            class_amplitude: self.class_amplitude,
            phase_jitter: self.phase_jitter,
            seed: self.seed,
            fractions: self.fractions(),
        }
    }

    pub fn fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.split_train,
            valid: self.split_valid,
            test: self.split_test,
        }
    }

    /// Dataset root: `$PMQ_DATA_DIR` if set, else `data`.
    pub fn data_dir() -> PathBuf {
        std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
    }

    pub fn manifest_path(&self) -> PathBuf {
        if self.manifest.is_empty() {
            Self::data_dir().join("manifest.csv")
        } else {
            PathBuf::from(&self.manifest)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub aug: MaskConfig,
    pub model: EncoderConfig,
    pub pcl: PclConfig,
    pub train: TrainConfig,
}

fn flatten(prefix: &str, table: &Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Table {
    let mut root = Table::new();
    for (key, v) in flat {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("non-empty key");
        let mut t = &mut root;
        for p in parts {
            t = t
                .entry(p.to_string())
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .expect("section keys are tables");
        }
        t.insert(last.to_string(), v.clone());
    }
    root
}

/// Parses the right-hand side of `key = value`. Anything that is not a valid
/// TOML value is taken as a bare string.
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Fits `v` to the type of the default at `key`.
fn coerce(key: &str, default: &Value, v: Value) -> Result<Value, ConfigError> {
    let bad = |v: &Value| ConfigError::BadValue {
        key: key.to_string(),
        reason: format!("expected {}, got `{v}`", default.type_str()),
    };
    match (default, v) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::String(_), Value::Integer(i)) => Ok(Value::String(i.to_string())),
        (Value::String(_), Value::Float(f)) => Ok(Value::String(f.to_string())),
        (Value::String(_), Value::Boolean(b)) => Ok(Value::String(b.to_string())),
        (d, v) if d.same_type(&v) => Ok(v),
        (_, v) => Err(bad(&v)),
    }
}

impl RunConfig {
    /// Every key with its current value.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let table = Value::try_from(self)
            .expect("config serializes")
            .as_table()
            .cloned()
            .expect("config is a table");
        let mut out = BTreeMap::new();
        flatten("", &table, &mut out);
        out
    }

    /// Applies `(key, value)` pairs on top of `self`.
    pub fn apply(&self, pairs: &BTreeMap<String, Value>) -> Result<Self, ConfigError> {
        let mut flat = self.to_flat();
        for (key, v) in pairs {
            let default = flat.get(key).ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
            let v = coerce(key, default, v.clone())?;
            flat.insert(key.clone(), v);
        }
        Value::Table(unflatten(&flat))
            .try_into::<RunConfig>()
            .map_err(|e| ConfigError::BadValue {
                key: pairs.keys().cloned().collect::<Vec<_>>().join(","),
                reason: e.to_string().trim().to_string(),
            })
    }

    /// Parses `key=value` override strings.
    pub fn parse_overrides(overrides: &[String]) -> Result<BTreeMap<String, Value>, ConfigError> {
        let mut out = BTreeMap::new();
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::BadValue {
                key: o.clone(),
                reason: "override must look like key=value".into(),
            })?;
            out.insert(k.trim().to_string(), parse_value(v));
        }
        Ok(out)
    }

    pub fn from_str_with_defaults(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let table: Table = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string().trim().to_string(),
        })?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        Self::default().apply(&flat)
    }

    /// Defaults, then the file at `path` (if any), then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Error> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Parse {
                    path: p.to_path_buf(),
                    reason: e.to_string(),
                })?;
                Self::from_str_with_defaults(&text, p)?
            }
            None => Self::default(),
        };
        let cfg = base.apply(&Self::parse_overrides(overrides)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with(&self, overrides: &[(&str, &str)]) -> Result<Self, ConfigError> {
        let pairs = overrides.iter().map(|(k, v)| (k.to_string(), parse_value(v))).collect();
        self.apply(&pairs)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.aug.validate()?;
        self.model.validate()?;
        self.pcl.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Sorted `key = value` lines.
    pub fn resolved(&self) -> String {
        self.to_flat().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::resolved`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.resolved().as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Keys whose values differ between `self` and `other`.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        let (a, b) = (self.to_flat(), other.to_flat());
        a.keys().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
    }
}
