use ndarray::{Array2, Axis};

use super::{l2_normalize_rows, l2_normalize_rows_backward, momentum_update, pcl_loss, PatientMemoryQueue, PclConfig};
use crate::augment::{neighbor_views, MaskConfig, ViewMasks};
use crate::data::Batch;
use crate::error::{Error, PclError};
use crate::model::{init_branches, Branch, EncoderConfig, NormMode};
use crate::nn::{zeros_like, Scalar};
use crate::rng::{self, Stream};
use crate::train::optim::AdamW;

/// Everything that changes during pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct PmqState<T> {
    pub query: Branch<T>,
    pub key: Branch<T>,
    pub queue: PatientMemoryQueue,
    pub optimizer: AdamW<T>,
    /// Completed optimizer steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Scalar> PmqState<T> {
    pub fn new(model: &EncoderConfig, pcl: &PclConfig, batch_size: usize, weight_decay: f64, seed: u64) -> Self {
        let (query, key) = init_branches(model, seed);
        let optimizer = AdamW::new(&query, weight_decay);
        Self {
            query,
            key,
            queue: PatientMemoryQueue::new(pcl.queue_size, batch_size, model.output_dim),
            optimizer,
            step: 0,
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub masks: MaskConfig,
    pub pcl: PclConfig,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub queue_len: usize,
    /// Mean size of the positive sets.
    pub mean_positives: f64,
}

/// Per-view encodings of a batch, stacked as rows.
struct Encoded<T> {
    reprs: Array2<T>,
    traces: Vec<crate::model::EncoderTrace<T>>,
}

fn encode_views<T: Scalar>(
    branch: &Branch<T>,
    views: &[Array2<T>],
    cfg: &MaskConfig,
    seed: u64,
    stream: Stream,
    step: u64,
    keep_traces: bool,
) -> Result<Encoded<T>, Error> {
    let k = branch.encoder.output_dim();
    let mut reprs = Array2::zeros((views.len(), k));
    let mut traces = Vec::new();
    for (i, v) in views.iter().enumerate() {
        let mut r = rng::stream(seed, stream, &[step, i as u64]);
        let masks = ViewMasks::draw(cfg, v.nrows(), branch.encoder.hidden_dim(), &mut r);
        let (repr, trace) = branch.encoder.forward(v.view(), &masks)?;
        reprs.row_mut(i).assign(&repr);
        if keep_traces {
            traces.push(trace);
        }
    }
    Ok(Encoded { reprs, traces })
}

/// One pretraining step on `batch`.
///
/// Query and key views are encoded by their branches, the keys are enqueued,
/// the loss is computed against the queue and back-propagated through the
/// query branch, the optimizer steps, the key branch follows by momentum and
/// the queue is trimmed back to capacity.
pub fn step_contrast<T: Scalar>(batch: &Batch, state: &mut PmqState<T>, cfg: &StepConfig) -> Result<StepOutcome, Error> {
    let b = batch.len();
    let mut qviews = Vec::with_capacity(b);
    let mut kviews = Vec::with_capacity(b);
    for x in batch.values.axis_iter(Axis(0)) {
        let (q, k) = neighbor_views(x.mapv(<T as Scalar>::from_f32).view(), cfg.masks.enable_neighbor)?;
        qviews.push(q);
        kviews.push(k);
    }
    let step = state.step;

    let q_enc = encode_views(&state.query, &qviews, &cfg.masks, cfg.seed, Stream::QueryView, step, true)?;
    let (z, proj_trace) = state.query.proj_head.forward(q_enc.reprs.view(), NormMode::Batch);
    let pred = state.query.pred_head.as_ref().expect("query branch has a prediction head");
    let (p, pred_trace) = pred.forward(z.view(), NormMode::Batch);
    let (queries, norms) = l2_normalize_rows(p.view());

    let k_enc = encode_views(&state.key, &kviews, &cfg.masks, cfg.seed, Stream::KeyView, step, false)?;
    let (kz, key_proj_trace) = state.key.proj_head.forward(k_enc.reprs.view(), NormMode::Batch);
    let (keys, _) = l2_normalize_rows(kz.view());

    let ids = &batch.patient_ids;
    let tau = cfg.pcl.tau;
    let (loss, grad, mean_positives) = if !cfg.pcl.enable_queue {
        let mut transient = PatientMemoryQueue::new(b, 0, keys.ncols());
        transient.enqueue(ids, keys.view())?;
        let out = pcl_loss(queries.view(), ids, &transient, tau)?;
        (out.loss, out.grad, mean(&out.positives))
    } else if cfg.pcl.separate_batch_term {
        separate_terms(&queries, &keys, ids, &mut state.queue, tau)?
    } else {
        state.queue.enqueue(ids, keys.view())?;
        let out = pcl_loss(queries.view(), ids, &state.queue, tau)?;
        (out.loss, out.grad, mean(&out.positives))
    };
    if !loss.is_finite() {
        return Err(Error::NumericalDivergence {
            epoch: state.epoch,
            step,
            loss: loss.as_f64(),
        });
    }

    let mut grads = zeros_like(&state.query);
    let dp = l2_normalize_rows_backward(queries.view(), norms.view(), grad.view());
    let dz = pred.backward(&pred_trace, dp.view(), grads.pred_head.as_mut().expect("gradient mirrors the branch"));
    let d_repr = state.query.proj_head.backward(&proj_trace, dz.view(), &mut grads.proj_head);
    for (trace, d) in q_enc.traces.iter().zip(d_repr.axis_iter(Axis(0))) {
        state.query.encoder.backward(trace, d, &mut grads.encoder);
    }

    state.optimizer.update(&mut state.query, &grads, cfg.lr);
    state.query.proj_head.update_running(&proj_trace);
    if let Some(pred) = state.query.pred_head.as_mut() {
        pred.update_running(&pred_trace);
    }
    state.key.proj_head.update_running(&key_proj_trace);
    momentum_update(&state.query, &mut state.key, cfg.pcl.momentum_m)?;
    if cfg.pcl.enable_queue {
        state.queue.trim();
    }
    state.step += 1;
    Ok(StepOutcome {
        loss: loss.as_f64(),
        queue_len: state.queue.len(),
        mean_positives,
    })
}

fn mean(v: &[usize]) -> f64 {
    v.iter().sum::<usize>() as f64 / v.len().max(1) as f64
}

/// In-batch term plus a history term against the queue as it stood before
/// this batch; queries whose patient has no history are left out of the
/// second term.
fn separate_terms<T: Scalar>(
    queries: &Array2<T>,
    keys: &Array2<T>,
    ids: &[u64],
    queue: &mut PatientMemoryQueue,
    tau: f64,
) -> Result<(T, Array2<T>, f64), PclError> {
    let b = ids.len();
    let mut batch_q = PatientMemoryQueue::new(b, 0, keys.ncols());
    batch_q.enqueue(ids, keys.view())?;
    let inner = pcl_loss(queries.view(), ids, &batch_q, tau)?;
    let mut loss = inner.loss;
    let mut grad = inner.grad;
    let mut positives = inner.positives.iter().sum::<usize>();

    let index = queue.positives_index();
    let rows: Vec<usize> = (0..b).filter(|&i| index.contains_key(&ids[i])).collect();
    if !rows.is_empty() {
        let sub_q = queries.select(Axis(0), &rows);
        let sub_ids: Vec<u64> = rows.iter().map(|&i| ids[i]).collect();
        let hist = pcl_loss(sub_q.view(), &sub_ids, queue, tau)?;
        loss += hist.loss;
        for (g, &i) in hist.grad.axis_iter(Axis(0)).zip(&rows) {
            let mut row = grad.row_mut(i);
            row += &g;
        }
        positives += hist.positives.iter().sum::<usize>();
    }
    queue.enqueue(ids, keys.view())?;
    Ok((loss, grad, positives as f64 / b as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Pooling;
    use crate::nn::fingerprint;
    use ndarray::Array3;

    fn model() -> EncoderConfig {
        EncoderConfig {
            input_leads: 2,
            hidden_dim: 8,
            output_dim: 8,
            num_blocks: 2,
            pooling: Pooling::Max,
            ..Default::default()
        }
    }

    fn batch(b: usize, seed: u64, ids: &[u64]) -> Batch {
        let values = Array3::from_shape_fn((b, 16, 2), |(i, t, c)| {
            ((t as f32 + seed as f32) * 0.3 * (1.0 + i as f32) + c as f32).sin()
        });
        Batch {
            values,
            patient_ids: ids.to_vec(),
            labels: None,
            indices: (0..b).collect(),
        }
    }

    fn cfg(pcl: PclConfig) -> StepConfig {
        StepConfig {
            masks: MaskConfig::default(),
            pcl,
            lr: 1e-3,
            seed: 41,
        }
    }

    #[test]
    fn queue_length_is_conserved() {
        let pcl = PclConfig {
            queue_size: 8,
            ..Default::default()
        };
        let mut state = PmqState::<f32>::new(&model(), &pcl, 4, 0.01, 1);
        let c = cfg(pcl);
        let mut total = 0;
        for s in 0..5 {
            let out = step_contrast(&batch(4, s, &[0, 1, 0, 2]), &mut state, &c).unwrap();
            total += 4;
            assert_eq!(out.queue_len, total.min(8));
            assert!(out.loss.is_finite());
        }
        assert_eq!(state.step, 5);
    }

    #[test]
    fn key_branch_moves_only_by_momentum() {
        let pcl = PclConfig {
            queue_size: 8,
            momentum_m: 1.0,
            ..Default::default()
        };
        let mut state = PmqState::<f32>::new(&model(), &pcl, 4, 0.01, 2);
        let before_key = fingerprint(&state.key);
        let before_query = fingerprint(&state.query);
        step_contrast(&batch(4, 0, &[0, 1, 2, 3]), &mut state, &cfg(pcl)).unwrap();
        assert_eq!(fingerprint(&state.key), before_key);
        assert_ne!(fingerprint(&state.query), before_query);
    }

    #[test]
    fn without_queue_uses_only_the_batch() {
        let pcl = PclConfig {
            queue_size: 8,
            enable_queue: false,
            ..Default::default()
        };
        let mut state = PmqState::<f32>::new(&model(), &pcl, 4, 0.01, 3);
        let out = step_contrast(&batch(4, 0, &[0, 0, 1, 1]), &mut state, &cfg(pcl.clone())).unwrap();
        assert_eq!(out.queue_len, 0);
        assert_eq!(out.mean_positives, 2.0);
        let again = step_contrast(&batch(4, 1, &[0, 0, 1, 1]), &mut state, &cfg(pcl)).unwrap();
        assert_eq!(again.mean_positives, 2.0);
    }

    #[test]
    fn separate_term_variant_runs() {
        let pcl = PclConfig {
            queue_size: 8,
            separate_batch_term: true,
            ..Default::default()
        };
        let mut state = PmqState::<f32>::new(&model(), &pcl, 4, 0.01, 4);
        let c = cfg(pcl);
        let first = step_contrast(&batch(4, 0, &[0, 1, 2, 3]), &mut state, &c).unwrap();
        assert_eq!(first.mean_positives, 1.0);
        let second = step_contrast(&batch(4, 1, &[0, 1, 2, 3]), &mut state, &c).unwrap();
        assert_eq!(second.mean_positives, 2.0);
        assert_eq!(second.queue_len, 8);
    }

    #[test]
    fn step_is_deterministic() {
        let pcl = PclConfig {
            queue_size: 8,
            ..Default::default()
        };
        let run = || {
            let mut state = PmqState::<f32>::new(&model(), &pcl, 4, 0.01, 5);
            for s in 0..3 {
                step_contrast(&batch(4, s, &[0, 1, 0, 1]), &mut state, &cfg(pcl.clone())).unwrap();
            }
            state
        };
        assert_eq!(run(), run());
    }
}
