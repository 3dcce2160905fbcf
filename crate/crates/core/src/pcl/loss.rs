use ndarray::{Array1, Array2, ArrayView2};

use super::PatientMemoryQueue;
use crate::error::PclError;
use crate::nn::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub loss: T,
    /// `∂loss/∂queries`, same shape as the queries.
    pub grad: Array2<T>,
    /// Size of each query's positive set.
    pub positives: Vec<usize>,
}

/// Loss of `queries` (unit rows) against every entry of `queue`, with each
/// query's positives being the entries that share its patient ID.
pub fn pcl_loss<T: Scalar>(
    queries: ArrayView2<'_, T>,
    patient_ids: &[u64],
    queue: &PatientMemoryQueue,
    tau: f64,
) -> Result<LossOutput<T>, PclError> {
    if queries.ncols() != queue.dim() {
        return Err(PclError::DimMismatch {
            expected: queue.dim(),
            found: queries.ncols(),
        });
    }
    let index = queue.positives_index();
    let mut positives = Vec::with_capacity(patient_ids.len());
    for &pid in patient_ids {
        match index.get(&pid) {
            Some(p) => positives.push(p.clone()),
            None => return Err(PclError::NoPositive(pid)),
        }
    }
    let keys = queue.keys_matrix::<T>();
    Ok(pcl_loss_with_positives(queries, keys.view(), &positives, tau))
}

/// The same loss over an explicit key matrix and per-query positive indices.
/// Every positive set must be non-empty.
pub fn pcl_loss_with_positives<T: Scalar>(
    queries: ArrayView2<'_, T>,
    keys: ArrayView2<'_, T>,
    positives: &[Vec<usize>],
    tau: f64,
) -> LossOutput<T> {
    let b = queries.nrows();
    assert_eq!(positives.len(), b, "one positive set per query");
    assert!(b > 0 && keys.nrows() > 0, "loss needs queries and keys");
    let inv_tau = T::lit(1.0 / tau);
    let logits = queries.dot(&keys.t()) * inv_tau;
    let scale = T::lit(2.0 * tau / b as f64);
    let grad_scale = T::lit(2.0 / b as f64);
    let mut total = T::zero();
    let mut coef = Array2::<T>::zeros(logits.raw_dim());
    for (i, pos) in positives.iter().enumerate() {
        assert!(!pos.is_empty(), "query {i} has no positive");
        let z = logits.row(i);
        let max = z.fold(T::neg_infinity(), |a, &v| a.max(v));
        let e: Array1<T> = z.mapv(|v| (v - max).exp());
        let sum = e.sum();
        let lse = max + sum.ln();
        let inv_p = T::one() / T::lit(pos.len() as f64);
        let mean_pos = pos.iter().map(|&j| z[j]).fold(T::zero(), |a, v| a + v) * inv_p;
        total += lse - mean_pos;
        let mut c = coef.row_mut(i);
        c.assign(&(e / sum));
        for &j in pos {
            c[j] -= inv_p;
        }
    }
    coef *= grad_scale;
    LossOutput {
        loss: total * scale,
        grad: coef.dot(&keys),
        positives: positives.iter().map(Vec::len).collect(),
    }
}
