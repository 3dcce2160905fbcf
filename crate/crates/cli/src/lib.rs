//! Command implementations behind the `pmq` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use pmq::config::RunConfig;
use pmq::data::{generate_synthetic, load_manifest, load_records, DatasetManifest, Split};
use pmq::eval::DatasetMetrics;
use pmq::train::{evaluate, finetune, pretrain, PretrainOutput};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Pmq(#[from] pmq::Error),
    #[error("{0}")]
    Usage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Pmq(e) => e.kind(),
            CliError::Usage(_) => "Usage",
            CliError::Io { .. } => "IoError",
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json_line(&self) -> String {
        json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

impl From<pmq::error::DataError> for CliError {
    fn from(e: pmq::error::DataError) -> Self {
        CliError::Pmq(e.into())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "pmq", version, about = "Patient contrastive pretraining for multi-lead ECG")]
pub struct Cli {
    #[command(flatten)]
    pub opts: RunOptions,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunOptions {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.label_ratio=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Shorthand for `--set train.seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parallel runs for `ablate` and `sweep-queue`.
    #[arg(long, default_value_t = 1, global = true)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (manifest plus records) from the `data.*` keys.
    Synth,
    /// Check a manifest and every record it references.
    Validate {
        /// Manifest to check; defaults to `data.manifest`.
        manifest: Option<PathBuf>,
    },
    /// Pretrain on the training split.
    Pretrain {
        /// Continue from a pretraining checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Finetune a classifier; without `--checkpoint` the encoder starts random.
    Finetune {
        /// Pretraining checkpoint to load the encoder from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a saved classifier.
    Evaluate {
        /// Classifier checkpoint written by `finetune`.
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Full model plus the four single-switch ablations.
    Ablate,
    /// Pretrain and finetune once per queue size.
    SweepQueue {
        /// Comma-separated queue sizes, e.g. `256,1024,4096`.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
    },
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            config: None,
            set: Vec::new(),
            out: Some(out.into()),
            seed: None,
            jobs: 1,
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut set = self.set.clone();
        if let Some(seed) = self.seed {
            set.push(format!("train.seed={seed}"));
        }
        Ok(RunConfig::load(self.config.as_deref(), &set)?)
    }

    fn out_or(&self, default: impl Into<PathBuf>) -> PathBuf {
        self.out.clone().unwrap_or_else(|| default.into())
    }
}

pub fn run(cli: &Cli) -> Result<Value> {
    let cfg = cli.opts.resolve()?;
    let o = &cli.opts;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg, &o.out_or(pmq::config::DataConfig::data_dir())),
        Command::Validate { manifest } => {
            cmd_validate(manifest.clone().unwrap_or_else(|| cfg.data.manifest_path()).as_path())
        }
        Command::Pretrain { resume } => cmd_pretrain(&cfg, &o.out_or("runs/pretrain"), resume.as_deref()),
        Command::Finetune { checkpoint } => cmd_finetune(&cfg, &o.out_or("runs/finetune"), checkpoint.as_deref()),
        Command::Evaluate { classifier, split } => cmd_evaluate(&cfg, &o.out_or("runs/evaluate"), classifier, *split),
        Command::Ablate => Ok(serde_json::to_value(cmd_ablate(&cfg, &o.out_or("runs/ablate"), o.jobs)?).expect("serializes")),
        Command::SweepQueue { sizes } => {
            Ok(serde_json::to_value(cmd_sweep_queue(&cfg, sizes, &o.out_or("runs/sweep-queue"), o.jobs)?).expect("serializes"))
        }
    }
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let m = generate_synthetic(&cfg.data.synth(), out)?;
    Ok(json!({
        "manifest": out.join("manifest.csv").display().to_string(),
        "summary": manifest_summary(&m),
    }))
}

fn manifest_summary(m: &DatasetManifest) -> Value {
    let splits: BTreeMap<&str, Value> = Split::ALL
        .iter()
        .map(|&s| {
            (
                s.as_str(),
                json!({ "records": m.entries_in(s).count(), "patients": m.patients(Some(s)).len() }),
            )
        })
        .collect();
    json!({
        "records": m.entries.len(),
        "patients": m.patients(None).len(),
        "num_classes": m.num_classes,
        "shape": [m.shape.0, m.shape.1],
        "splits": splits,
    })
}

pub fn cmd_validate(manifest: &Path) -> Result<Value> {
    let m = load_manifest(manifest)?;
    load_records(&m, &[], false)?;
    Ok(json!({ "valid": true, "summary": manifest_summary(&m) }))
}

fn manifest_for(cfg: &RunConfig) -> Result<DatasetManifest> {
    Ok(load_manifest(&cfg.data.manifest_path())?)
}

/// Pretrains on the training split of the configured manifest.
pub fn run_pretrain(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<PretrainOutput> {
    let m = manifest_for(cfg)?;
    let records = load_records(&m, &[Split::Train], cfg.data.normalize)?;
    Ok(pretrain(cfg, &records, out, resume)?)
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<Value> {
    let r = run_pretrain(cfg, out, resume)?;
    Ok(json!({
        "checkpoint": r.checkpoint.display().to_string(),
        "completed": r.completed,
        "epoch_losses": r.report.epoch_losses,
    }))
}

pub fn cmd_finetune(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<Value> {
    let m = manifest_for(cfg)?;
    let r = finetune(cfg, &m, checkpoint, out)?;
    Ok(json!({
        "checkpoint": r.checkpoint.display().to_string(),
        "selected_epoch": r.report.selected_epoch,
        "metrics": r.metrics,
    }))
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &Path, classifier: &Path, split: Split) -> Result<Value> {
    let m = manifest_for(cfg)?;
    let (metrics, _) = evaluate(cfg, &m, classifier, split, out)?;
    Ok(json!({ "report": out.join("report.json").display().to_string(), "metrics": metrics }))
}

/// Pretrain then finetune from the resulting query encoder.
pub fn pipeline(cfg: &RunConfig, out: &Path) -> Result<(DatasetMetrics, f64)> {
    let m = manifest_for(cfg)?;
    let records = load_records(&m, &[Split::Train], cfg.data.normalize)?;
    let pre = pretrain(cfg, &records, &out.join("pretrain"), None)?;
    let fine = finetune(cfg, &m, Some(&pre.checkpoint), &out.join("finetune"))?;
    let metrics = *fine.metrics.per_dataset.values().next().expect("one dataset");
    Ok((metrics, pre.report.epoch_losses.last().copied().unwrap_or(f64::NAN)))
}

/// Runs `f` over `items` on up to `jobs` threads, preserving order.
fn parallel<I: Sync, O: Send>(items: &[I], jobs: usize, f: impl Fn(&I) -> Result<O> + Sync) -> Result<Vec<O>> {
    let jobs = jobs.max(1);
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(jobs) {
        let results: Vec<Result<O>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|i| s.spawn(|| f(i))).collect();
            handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    /// Overrides applied on top of the shared config.
    pub overrides: BTreeMap<String, String>,
    /// Keys whose resolved values differ from the full model's.
    pub changed_keys: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: DatasetMetrics,
    pub final_pretrain_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

/// Row names and their overrides, full model first.
pub fn ablation_variants() -> Vec<(&'static str, Vec<(&'static str, &'static str)>)> {
    vec![
        ("full", vec![]),
        ("w/o mask_t", vec![("aug.enable_time_mask", "false")]),
        ("w/o mask_f", vec![("aug.enable_freq_mask", "false")]),
        ("w/o neighbor", vec![("aug.enable_neighbor", "false")]),
        ("w/o queue", vec![("pcl.enable_queue", "false")]),
    ]
}

fn slug(name: &str) -> String {
    name.replace("w/o ", "without_").replace([' ', '/'], "_")
}

pub fn cmd_ablate(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<AblationReport> {
    let variants: Vec<(String, BTreeMap<String, String>, RunConfig)> = ablation_variants()
        .into_iter()
        .map(|(name, ov)| {
            let c = cfg.with(&ov).map_err(pmq::Error::from)?;
            let ov = ov.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            Ok((name.to_string(), ov, c))
        })
        .collect::<Result<_>>()?;
    let rows = parallel(&variants, jobs, |(name, overrides, c)| {
        let (metrics, loss) = pipeline(c, &out.join(slug(name)))?;
        Ok(AblationRow {
            name: name.clone(),
            overrides: overrides.clone(),
            changed_keys: c.diff(cfg),
            config_hash: c.hash(),
            seed: c.train.seed,
            metrics,
            final_pretrain_loss: loss,
        })
    })?;
    let report = AblationReport {
        seed: cfg.train.seed,
        rows,
    };
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut csv = String::from("name,overrides,acc,f1_macro,auroc_macro,final_pretrain_loss,config_hash,seed\n");
    for r in &report.rows {
        let ov: Vec<String> = r.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
        csv += &format!(
            "{},{},{},{},{},{},{},{}\n",
            r.name,
            ov.join(";"),
            r.metrics.acc,
            r.metrics.f1_macro,
            r.metrics.auroc_macro.map_or(String::new(), |a| a.to_string()),
            r.final_pretrain_loss,
            r.config_hash,
            r.seed
        );
    }
    write(out, "ablation.csv", &csv)?;
    write(out, "ablation.json", &(serde_json::to_string_pretty(&report).expect("serializes") + "\n"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub queue_size: usize,
    pub metrics: DatasetMetrics,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

pub fn cmd_sweep_queue(cfg: &RunConfig, sizes: &[usize], out: &Path, jobs: usize) -> Result<SweepReport> {
    if sizes.is_empty() {
        return Err(CliError::Usage("sweep-queue needs at least one size".into()));
    }
    let b = cfg.train.batch_size;
    if let Some(&s) = sizes.iter().find(|&&s| s < b) {
        return Err(CliError::Usage(format!("queue size {s} is smaller than the batch size {b}")));
    }
    let configs: Vec<(usize, RunConfig)> = sizes
        .iter()
        .map(|&s| Ok((s, cfg.with(&[("pcl.queue_size", &s.to_string())]).map_err(pmq::Error::from)?)))
        .collect::<Result<_>>()?;
    let rows = parallel(&configs, jobs, |(size, c)| {
        let (metrics, _) = pipeline(c, &out.join(format!("queue_{size}")))?;
        Ok(SweepRow {
            queue_size: *size,
            metrics,
            config_hash: c.hash(),
        })
    })?;
    let report = SweepReport {
        seed: cfg.train.seed,
        rows,
    };
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut csv = String::from("queue_size,acc,f1_macro,auroc_macro\n");
    for r in &report.rows {
        csv += &format!(
            "{},{},{},{}\n",
            r.queue_size,
            r.metrics.acc,
            r.metrics.f1_macro,
            r.metrics.auroc_macro.map_or(String::new(), |a| a.to_string())
        );
    }
    write(out, "sweep_queue.csv", &csv)?;
    write(out, "sweep_queue.json", &(serde_json::to_string_pretty(&report).expect("serializes") + "\n"))?;
    Ok(report)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, text).map_err(io_err(&p))
}
