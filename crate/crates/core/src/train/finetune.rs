use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde_json::{json, Value};

use super::optim::{warmup_schedule, AdamW};
use super::report::{write_run_files, RunReport};
use super::Select;
use crate::augment::ViewMasks;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{iter_batches, load_records, subsample_labels, subsample_stratified, DatasetManifest, SampleRecord, Split};
use crate::error::{CheckpointError, Error, ModelError, Result};
use crate::eval::{macro_f1, DatasetMetrics, MetricsReport};
use crate::model::{init_branches, ClassifierHead, Encoder, EncoderConfig};
use crate::nn::{join, zeros_like, ParamView, ParamViewMut, Params, Scalar};
use crate::rng::{self, Stream};

/// Encoder with a classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    pub encoder: Encoder<T>,
    pub head: ClassifierHead<T>,
}

impl<T: Scalar> Params<T> for Classifier<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.head.visit(&join(prefix, "classifier"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        self.encoder.visit_mut(&join(prefix, "encoder"), out);
        self.head.visit_mut(&join(prefix, "classifier"), out);
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        self.head.visit_buffers(&join(prefix, "classifier"), out);
    }
    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        self.head.visit_buffers_mut(&join(prefix, "classifier"), out);
    }
}

impl Classifier<f32> {
    /// Eval-mode logits for `records`, as `f64`.
    pub fn logits(&self, records: &[SampleRecord]) -> Result<Array2<f64>> {
        let mut reprs = Array2::<f32>::zeros((records.len(), self.encoder.output_dim()));
        for (i, r) in records.iter().enumerate() {
            reprs.row_mut(i).assign(&self.encoder.represent(r.values.view(), &ViewMasks::none())?);
        }
        let mut unused = rng::stream(0, Stream::Dropout, &[]);
        Ok(self.head.forward(reprs.view(), false, &mut unused).0.mapv(f64::from))
    }

    pub fn metrics(&self, records: &[SampleRecord]) -> Result<DatasetMetrics> {
        let truth = labels(records)?;
        Ok(DatasetMetrics::from_logits(self.logits(records)?.view(), &truth)?)
    }
}

#[derive(Debug)]
pub struct FinetuneOutput {
    pub classifier: Classifier<f32>,
    pub metrics: MetricsReport,
    pub report: RunReport,
    pub checkpoint: PathBuf,
}

pub const CLASSIFIER_CHECKPOINT: &str = "classifier.ckpt";

fn labels(records: &[SampleRecord]) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            r.label
                .ok_or_else(|| Error::LabelMissing(format!("patient {} trial {}", r.patient_id, r.trial_id)))
        })
        .collect()
}

/// Index of the epoch to report: the first maximum of `valid_f1` for
/// [`Select::Best`], the last epoch otherwise.
pub fn select_epoch(valid_f1: &[f64], select: Select) -> usize {
    match select {
        Select::Last => valid_f1.len().saturating_sub(1),
        Select::Best => {
            let mut best = 0;
            for (i, &v) in valid_f1.iter().enumerate() {
                if v > valid_f1[best] {
                    best = i;
                }
            }
            best
        }
    }
}

fn same_architecture(a: &EncoderConfig, b: &EncoderConfig) -> bool {
    (a.input_leads, a.hidden_dim, a.output_dim, a.num_blocks, a.kernel_size, a.dilation, a.pooling)
        == (b.input_leads, b.hidden_dim, b.output_dim, b.num_blocks, b.kernel_size, b.dilation, b.pooling)
}

/// Query encoder of a pretraining checkpoint.
fn pretrained_encoder(path: &Path, model: &EncoderConfig) -> Result<Encoder<f32>> {
    let ck = Checkpoint::read(path)?;
    if ck.meta["kind"] != "pretrain" {
        return Err(CheckpointError::Malformed {
            path: path.to_path_buf(),
            reason: "not a pretraining checkpoint".into(),
        }
        .into());
    }
    let saved: EncoderConfig = serde_json::from_value(ck.meta["config"]["model"].clone()).map_err(|e| {
        CheckpointError::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })?;
    if !same_architecture(&saved, model) {
        return Err(ModelError::InvalidConfig("model.* differs from the pretraining checkpoint".into()).into());
    }
    let mut encoder = init_branches::<f32>(model, 0).0.encoder;
    ck.load_params("query.encoder", &mut encoder)?;
    Ok(encoder)
}

fn cross_entropy(logits: &Array2<f32>, truth: &[usize]) -> (f64, Array2<f32>) {
    let b = truth.len() as f32;
    let mut grad = logits.clone();
    let mut loss = 0.0f64;
    for (mut row, &t) in grad.axis_iter_mut(Axis(0)).zip(truth) {
        let max = row.fold(f32::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
        loss -= f64::from(row[t]).ln();
        row[t] -= 1.0;
        row /= b;
    }
    (loss / truth.len() as f64, grad)
}

/// Trains `encoder` (query encoder of `pretrained`, or a fresh random one)
/// with a new classification head on the label-subsampled training split,
/// selects an epoch on validation macro-F1 and reports test metrics.
pub fn finetune(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    pretrained: Option<&Path>,
    out_dir: &Path,
) -> Result<FinetuneOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let t = &cfg.train;
    let norm = cfg.data.normalize;
    let all_train = load_records(manifest, &[Split::Train], norm)?;
    labels(&all_train)?;
    let train = if t.stratify {
        subsample_stratified(&all_train, t.label_ratio, t.seed)?
    } else {
        subsample_labels(&all_train, t.label_ratio, t.seed)?
    };
    let valid = load_records(manifest, &[Split::Valid], norm)?;
    let test = load_records(manifest, &[Split::Test], norm)?;
    let valid_truth = labels(&valid)?;
    let classes = manifest.num_classes;
    if classes < 2 {
        return Err(Error::ClassCountMismatch {
            expected: 2,
            found: classes,
        });
    }

    let (encoder, provenance) = match pretrained {
        Some(p) => (pretrained_encoder(p, &cfg.model)?, "query_branch"),
        None => (init_branches::<f32>(&cfg.model, t.seed).0.encoder, "random_init"),
    };
    let m = &cfg.model;
    let head = ClassifierHead::new(
        m.output_dim,
        m.classifier_hidden,
        classes,
        m.classifier_dropout,
        &mut rng::stream(t.seed, Stream::HeadInit, &[]),
    );
    let mut model = Classifier { encoder, head };
    let mut opt = AdamW::new(&model, t.weight_decay);
    let steps_per_epoch = train.len().div_ceil(t.batch_size);
    let total_steps = (steps_per_epoch * t.finetune_epochs) as u64;

    let mut report = RunReport::new("finetune", cfg);
    let mut snapshots = Vec::new();
    for epoch in 0..t.finetune_epochs {
        let shuffle = rng::derive(t.seed, Stream::Shuffle, &[1 << 32 | epoch as u64]);
        let (mut sum, mut n) = (0.0, 0);
        for (bi, batch) in iter_batches(&train, t.batch_size, shuffle, false).enumerate() {
            let truth = batch.labels.clone().expect("labels checked above");
            let mut reprs = Array2::<f32>::zeros((batch.len(), m.output_dim));
            let mut traces = Vec::with_capacity(batch.len());
            for (i, x) in batch.values.axis_iter(Axis(0)).enumerate() {
                let (r, trace) = model.encoder.forward(x, &ViewMasks::none())?;
                reprs.row_mut(i).assign(&r);
                traces.push(trace);
            }
            let mut drop = rng::stream(t.seed, Stream::Dropout, &[epoch as u64, bi as u64]);
            let (logits, head_trace) = model.head.forward(reprs.view(), true, &mut drop);
            let (loss, d_logits) = cross_entropy(&logits, &truth);
            if !loss.is_finite() {
                return Err(Error::NumericalDivergence {
                    epoch,
                    step: opt.step,
                    loss,
                });
            }
            let mut grads = zeros_like(&model);
            let d_repr = model.head.backward(&head_trace, d_logits.view(), &mut grads.head);
            for (trace, d) in traces.iter().zip(d_repr.axis_iter(Axis(0))) {
                model.encoder.backward(trace, d, &mut grads.encoder);
            }
            let lr = warmup_schedule(opt.step, total_steps, t.finetune_lr, t.warmup_frac);
            opt.update(&mut model, &grads, lr);
            model.head.update_running(&head_trace);
            sum += loss;
            n += 1;
        }
        let pred: Vec<usize> = model
            .logits(&valid)?
            .rows()
            .into_iter()
            .map(|r| crate::eval::argmax(r.iter().copied()))
            .collect();
        let f1 = macro_f1(&pred, &valid_truth, classes)?;
        report.epoch_losses.push(sum / n as f64);
        report.valid_f1.push(f1);
        log::info!("finetune epoch {}/{} loss {:.5} valid f1 {:.4}", epoch + 1, t.finetune_epochs, sum / n as f64, f1);
        match t.select {
            Select::Best => {
                if snapshots.is_empty() || f1 > report.valid_f1[select_epoch(&report.valid_f1[..epoch], Select::Best)] {
                    snapshots = vec![model.clone()];
                }
            }
            Select::Last => snapshots = vec![model.clone()],
        }
    }
    let selected = select_epoch(&report.valid_f1, t.select);
    let classifier = snapshots.pop().expect("at least one epoch");

    let test_metrics = classifier.metrics(&test)?;
    let metrics = MetricsReport::new(BTreeMap::from([(cfg.data.name.clone(), test_metrics)]))?;
    let checkpoint = out_dir.join(CLASSIFIER_CHECKPOINT);
    let mut ck = Checkpoint::new(json!({
        "kind": "classifier",
        "config": cfg,
        "num_classes": classes,
        "selected_epoch": selected + 1,
        "provenance": {
            "encoder": provenance,
            "source": pretrained.map(|p| p.display().to_string()),
        },
    }));
    ck.push_params("model", &classifier);
    ck.write(&checkpoint)?;

    report.metrics = metrics.per_dataset.clone();
    report.overall = Some(metrics.overall);
    report.selected_epoch = Some(selected + 1);
    report.extra.insert("encoder_init".into(), json!(provenance));
    report.extra.insert("train_records".into(), json!(train.len()));
    if let Some(p) = pretrained {
        report.extra.insert("pretrained".into(), json!(p.display().to_string()));
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    write_run_files(out_dir, &report, cfg)?;
    Ok(FinetuneOutput {
        classifier,
        metrics,
        report,
        checkpoint,
    })
}

/// Classifier, its training config and its checkpoint metadata.
pub fn load_classifier(path: &Path) -> Result<(Classifier<f32>, RunConfig, Value)> {
    let ck = Checkpoint::read(path)?;
    let malformed = |reason: String| CheckpointError::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    if ck.meta["kind"] != "classifier" {
        return Err(malformed("not a classifier checkpoint".into()).into());
    }
    let cfg: RunConfig = serde_json::from_value(ck.meta["config"].clone()).map_err(|e| malformed(e.to_string()))?;
    let classes = ck.meta["num_classes"]
        .as_u64()
        .ok_or_else(|| malformed("missing num_classes".into()))? as usize;
    let m = &cfg.model;
    let mut r = rng::stream(0, Stream::HeadInit, &[]);
    let mut model = Classifier {
        encoder: init_branches::<f32>(m, 0).0.encoder,
        head: ClassifierHead::new(m.output_dim, m.classifier_hidden, classes, m.classifier_dropout, &mut r),
    };
    ck.load_params("model", &mut model)?;
    Ok((model, cfg, ck.meta))
}

/// Scores a saved classifier on one split of `manifest` and writes
/// `report.json` into `out_dir`.
pub fn evaluate(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    classifier: &Path,
    split: Split,
    out_dir: &Path,
) -> Result<(MetricsReport, RunReport)> {
    let (model, trained_cfg, meta) = load_classifier(classifier)?;
    if model.head.num_classes() != manifest.num_classes {
        return Err(Error::ClassCountMismatch {
            expected: model.head.num_classes(),
            found: manifest.num_classes,
        });
    }
    let records = load_records(manifest, &[split], trained_cfg.data.normalize)?;
    let metrics = MetricsReport::new(BTreeMap::from([(cfg.data.name.clone(), model.metrics(&records)?)]))?;
    let mut report = RunReport::new("evaluate", cfg);
    report.metrics = metrics.per_dataset.clone();
    report.overall = Some(metrics.overall);
    report.extra.insert("classifier".into(), json!(classifier.display().to_string()));
    report.extra.insert("split".into(), json!(split.as_str()));
    report.extra.insert("provenance".into(), meta["provenance"].clone());
    write_run_files(out_dir, &report, cfg)?;
    Ok((metrics, report))
}
