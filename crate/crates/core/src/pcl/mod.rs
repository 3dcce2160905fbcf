//! Patient contrastive learning with a patient memory queue.
//!
//! Per step: keys from the momentum branch are enqueued with their patient IDs
//! first, then each query is scored against the whole queue. Every queued key
//! of the query's patient (its own fresh key included) is a positive and the
//! per-query loss averages over them:
//!
//! ```text
//! L = 2τ · mean_i mean_{k⁺ ∈ P_i} [ -log( exp(q_i·k⁺/τ) / Σ_{k ∈ Q} exp(q_i·k/τ) ) ]
//! ```
//!
//! Afterwards the oldest entries are dequeued so the queue holds at most `M`.

mod loss;
mod momentum;
mod queue;
mod step;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use loss::{pcl_loss, pcl_loss_with_positives, LossOutput};
pub use momentum::momentum_update;
pub use queue::{PatientMemoryQueue, QueueEntry};
pub use step::{step_contrast, PmqState, StepConfig, StepOutcome};

use crate::error::PclError;
use crate::nn::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PclConfig {
    pub tau: f64,
    pub momentum_m: f64,
    pub queue_size: usize,
    pub enable_queue: bool,
    /// Scores the in-batch keys and the pre-existing queue as two separate
    /// loss terms instead of folding the batch into the queue.
    pub separate_batch_term: bool,
}

impl Default for PclConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            momentum_m: 0.999,
            queue_size: 16384,
            enable_queue: true,
            separate_batch_term: false,
        }
    }
}

impl PclConfig {
    pub fn validate(&self) -> Result<(), PclError> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(PclError::InvalidConfig(format!("tau={} outside (0, 1]", self.tau)));
        }
        if !(0.0..1.0).contains(&self.momentum_m) && self.momentum_m != 1.0 {
            return Err(PclError::InvalidConfig(format!("m={} outside [0, 1)", self.momentum_m)));
        }
        if self.queue_size == 0 {
            return Err(PclError::InvalidConfig("queue_size must be positive".into()));
        }
        Ok(())
    }
}

static ZERO_NORM_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// How many zero vectors [`l2_normalize`] has been asked to normalise.
pub fn zero_norm_warnings() -> u64 {
    ZERO_NORM_WARNINGS.load(Ordering::Relaxed)
}

/// `v / ‖v‖₂`. A zero vector is returned unchanged and counted.
pub fn l2_normalize<T: Scalar>(v: ArrayView1<'_, T>) -> Array1<T> {
    let norm = v.dot(&v).sqrt();
    if norm > T::zero() {
        &v / norm
    } else {
        ZERO_NORM_WARNINGS.fetch_add(1, Ordering::Relaxed);
        log::warn!("l2_normalize called on a zero vector");
        v.to_owned()
    }
}

/// Row-wise normalisation. Returns the unit rows and the original norms
/// (zero rows pass through with norm 0).
pub fn l2_normalize_rows<T: Scalar>(x: ArrayView2<'_, T>) -> (Array2<T>, Array1<T>) {
    let mut out = Array2::zeros(x.raw_dim());
    let mut norms = Array1::zeros(x.nrows());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        norms[i] = row.dot(&row).sqrt();
        out.row_mut(i).assign(&l2_normalize(row));
    }
    (out, norms)
}

/// `∂/∂x` of `x/‖x‖` given the unit rows `y`: `(dy - y (y·dy)) / ‖x‖`.
pub fn l2_normalize_rows_backward<T: Scalar>(
    y: ArrayView2<'_, T>,
    norms: ArrayView1<'_, T>,
    dy: ArrayView2<'_, T>,
) -> Array2<T> {
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..y.nrows() {
        if norms[i] == T::zero() {
            continue;
        }
        let yi = y.row(i);
        let gi = dy.row(i);
        let proj = yi.dot(&gi);
        dx.row_mut(i).assign(&((&gi - &(&yi * proj)) / norms[i]));
    }
    dx
}
