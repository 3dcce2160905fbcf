//! Central finite-difference gradient checks (double precision only).
//!
//! These helpers only ever evaluate the forward function; they share nothing
//! with the analytic backward passes they are used to verify.

use ndarray::{Array, Dimension};

use super::Params;

/// Agreement between analytic and numeric gradients.
///
/// `max_rel_err` is the worst per-tensor error `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`
/// and is what [`GradCheckReport::passes`] tests. `max_elem_err` is the worst
/// single-coordinate relative error, which is dominated by truncation error on
/// near-zero components at coarse steps.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_elem_err: f64,
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }

    fn record(&mut self, name: &str, analytic: &[f64], numeric: &[f64]) {
        let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm_a = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_n = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let scale = norm_a.max(norm_n);
        let err = if scale < 1e-8 { 0.0 } else { diff / scale };
        self.checked += analytic.len();
        for (a, n) in analytic.iter().zip(numeric) {
            self.max_elem_err = self.max_elem_err.max(relative_error(*a, *n));
        }
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some(format!("{name}: |a-n| {diff:.3e}, |a| {norm_a:.3e}, |n| {norm_n:.3e}"));
        }
    }
}

/// `|a - n| / max(|a|, |n|)`, with both values below `1e-8` treated as agreeing.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Picks up to `limit` evenly strided indices out of `len`.
fn sample_indices(len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        return (0..len).collect();
    }
    let stride = len as f64 / limit as f64;
    (0..limit).map(|i| (i as f64 * stride) as usize).collect()
}

/// Compares `analytic` (a gradient laid out like `model`) against central
/// differences of `loss` with respect to each parameter of `model`.
pub fn check_params<M, F>(model: &M, analytic: &M, loss: F, step: f64, per_tensor: usize) -> GradCheckReport
where
    M: Params<f64> + Clone,
    F: Fn(&M) -> f64,
{
    let mut report = GradCheckReport::default();
    let grads: Vec<(String, Vec<f64>)> = analytic
        .params()
        .into_iter()
        .map(|p| (p.name, p.data.to_vec()))
        .collect();
    let mut probe = model.clone();
    for (t, (name, grad)) in grads.iter().enumerate() {
        let idx = sample_indices(grad.len(), per_tensor);
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let original = probe.params()[t].data[i];
            probe.params_mut()[t].data[i] = original + step;
            let up = loss(&probe);
            probe.params_mut()[t].data[i] = original - step;
            let down = loss(&probe);
            probe.params_mut()[t].data[i] = original;
            numeric.push((up - down) / (2.0 * step));
        }
        let analytic: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
        report.record(name, &analytic, &numeric);
    }
    report
}

/// Same check for the gradient with respect to an input array.
pub fn check_input<D, F>(x: &Array<f64, D>, analytic: &Array<f64, D>, loss: F, step: f64) -> GradCheckReport
where
    D: Dimension,
    F: Fn(&Array<f64, D>) -> f64,
{
    let mut report = GradCheckReport::default();
    let mut probe = x.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let original = probe.as_slice().expect("standard layout")[i];
        probe.as_slice_mut().expect("standard layout")[i] = original + step;
        let up = loss(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = original - step;
        let down = loss(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = original;
        numeric.push((up - down) / (2.0 * step));
    }
    report.record("input", analytic.as_slice().expect("standard layout"), &numeric);
    report
}
