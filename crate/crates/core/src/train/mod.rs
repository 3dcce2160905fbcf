//! Pretraining and finetuning drivers.

mod finetune;
pub mod optim;
mod pretrain;
mod report;

pub use finetune::{evaluate, finetune, load_classifier, select_epoch, Classifier, FinetuneOutput, CLASSIFIER_CHECKPOINT};
pub use optim::{warmup_schedule, warmup_steps, AdamW};
pub use pretrain::{pretrain, PretrainOutput, PRETRAIN_CHECKPOINT};
pub use report::{source_fingerprint, write_run_files, RunReport};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Which finetuning epoch supplies the reported test metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Select {
    /// Highest validation macro-F1 (first on ties).
    Best,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    /// Pretraining epochs and base learning rate.
    pub epochs: usize,
    pub base_lr: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub label_ratio: f64,
    /// Keep class proportions when subsampling labels.
    pub stratify: bool,
    pub select: Select,
    /// Write an extra checkpoint every this many epochs (0: only the final one).
    pub checkpoint_every: usize,
    /// Stop pretraining once this many epochs are complete (0: run to the end).
    /// The saved checkpoint resumes exactly where the run stopped.
    pub stop_after: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 41,
            batch_size: 256,
            warmup_frac: 0.05,
            weight_decay: 0.01,
            epochs: 100,
            base_lr: 1e-3,
            finetune_epochs: 50,
            finetune_lr: 1e-4,
            label_ratio: 1.0,
            stratify: false,
            select: Select::Best,
            checkpoint_every: 10,
            stop_after: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: &str| {
            Err(ConfigError::BadValue {
                key: format!("train.{key}"),
                reason: reason.into(),
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.finetune_epochs == 0 {
            return bad("finetune_epochs", "must be positive");
        }
        if !(self.base_lr > 0.0) {
            return bad("base_lr", "must be positive");
        }
        if !(self.finetune_lr > 0.0) {
            return bad("finetune_lr", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad("warmup_frac", "must lie in [0, 1]");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if !(self.label_ratio > 0.0 && self.label_ratio <= 1.0) {
            return bad("label_ratio", "must lie in (0, 1]");
        }
        Ok(())
    }
}
