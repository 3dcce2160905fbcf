use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use super::optim::warmup_schedule;
use super::report::{write_run_files, RunReport};
use crate::checkpoint::{pretrain_checkpoint, restore_pretrain, Checkpoint};
use crate::config::RunConfig;
use crate::data::{iter_batches, SampleRecord};
use crate::error::{DataError, Error, Result};
use crate::pcl::{step_contrast, PmqState, StepConfig};
use crate::rng::{self, Stream};

#[derive(Debug)]
pub struct PretrainOutput {
    pub state: PmqState<f32>,
    pub report: RunReport,
    /// Latest full-state checkpoint.
    pub checkpoint: PathBuf,
    /// False when the run stopped early because of `train.stop_after`.
    pub completed: bool,
}

/// Name of the final pretraining checkpoint inside the output directory.
pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";

fn epoch_losses(ck: &Checkpoint) -> Vec<f64> {
    ck.meta["epoch_losses"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
        .unwrap_or_default()
}

/// Pretrains on `records` (drop-last batches), writing checkpoints, `report.json`
/// and `config.resolved` into `out_dir`. With `resume`, continues from that
/// checkpoint; the result is identical to a run that was never interrupted.
pub fn pretrain(cfg: &RunConfig, records: &[SampleRecord], out_dir: &Path, resume: Option<&Path>) -> Result<PretrainOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let t = &cfg.train;
    let steps_per_epoch = records.len() / t.batch_size;
    if steps_per_epoch == 0 {
        return Err(DataError::InvalidArgument(format!(
            "{} records cannot fill a batch of {}",
            records.len(),
            t.batch_size
        ))
        .into());
    }
    let total_steps = (steps_per_epoch * t.epochs) as u64;

    let (mut state, mut losses) = match resume {
        Some(path) => {
            let ck = Checkpoint::read(path)?;
            let (state, saved) = restore_pretrain(&ck, path)?;
            let mismatch: Vec<String> = saved
                .diff(cfg)
                .into_iter()
                .filter(|k| k != "train.stop_after" && k != "train.checkpoint_every")
                .collect();
            if !mismatch.is_empty() {
                return Err(crate::error::ConfigError::BadValue {
                    key: mismatch.join(","),
                    reason: "differs from the checkpoint being resumed".into(),
                }
                .into());
            }
            (state, epoch_losses(&ck))
        }
        None => (
            PmqState::new(&cfg.model, &cfg.pcl, t.batch_size, t.weight_decay, t.seed),
            Vec::new(),
        ),
    };

    let save = |state: &PmqState<f32>, losses: &[f64], path: &Path| {
        pretrain_checkpoint(state, cfg, json!({ "epoch_losses": losses })).write(path)
    };
    let mut completed = true;
    while state.epoch < t.epochs {
        let epoch = state.epoch;
        let shuffle = rng::derive(t.seed, Stream::Shuffle, &[epoch as u64]);
        let mut sum = 0.0;
        let mut n = 0;
        for batch in iter_batches(records, t.batch_size, shuffle, true) {
            let step = StepConfig {
                masks: cfg.aug.clone(),
                pcl: cfg.pcl.clone(),
                lr: warmup_schedule(state.step, total_steps, t.base_lr, t.warmup_frac),
                seed: t.seed,
            };
            let out = step_contrast(&batch, &mut state, &step).map_err(|e| match e {
                Error::NumericalDivergence { step, loss, .. } => Error::NumericalDivergence { epoch, step, loss },
                other => other,
            })?;
            sum += out.loss;
            n += 1;
        }
        state.epoch += 1;
        losses.push(sum / n as f64);
        log::info!("pretrain epoch {}/{} loss {:.6}", state.epoch, t.epochs, sum / n as f64);
        if t.checkpoint_every > 0 && state.epoch % t.checkpoint_every == 0 && state.epoch < t.epochs {
            save(&state, &losses, &out_dir.join(format!("checkpoint_epoch{:04}.ckpt", state.epoch)))?;
        }
        if t.stop_after > 0 && state.epoch >= t.stop_after && state.epoch < t.epochs {
            completed = false;
            break;
        }
    }
    let checkpoint = out_dir.join(PRETRAIN_CHECKPOINT);
    save(&state, &losses, &checkpoint)?;

    let mut report = RunReport::new("pretrain", cfg);
    report.epoch_losses = losses;
    report.extra.insert("completed".into(), json!(completed));
    report.extra.insert("steps".into(), json!(state.step));
    report.extra.insert("num_records".into(), json!(records.len()));
    if let Some(p) = resume {
        report.extra.insert("resumed_from".into(), json!(p.display().to_string()));
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    write_run_files(out_dir, &report, cfg)?;
    Ok(PretrainOutput {
        state,
        report,
        checkpoint,
        completed,
    })
}
