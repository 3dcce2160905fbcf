//! Classification metrics and the cross-dataset "overall" average.
//!
//! All values are fractions in `[0, 1]`.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::EvalError;

fn check_lengths(pred: usize, truth: usize) -> Result<(), EvalError> {
    if pred != truth {
        return Err(EvalError::LengthMismatch(pred, truth));
    }
    if truth == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, EvalError> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// `(C, C)` counts, rows indexed by truth and columns by prediction.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], classes: usize) -> Result<Array2<u64>, EvalError> {
    check_lengths(pred.len(), truth.len())?;
    let mut m = Array2::zeros((classes, classes));
    for (&p, &t) in pred.iter().zip(truth) {
        for label in [p, t] {
            if label >= classes {
                return Err(EvalError::LabelOutOfRange { label, classes });
            }
        }
        m[[t, p]] += 1;
    }
    Ok(m)
}

/// Unweighted mean of per-class F1. A class that is neither predicted nor
/// present scores 0 and still counts towards the mean.
pub fn macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64, EvalError> {
    let m = confusion_matrix(pred, truth, classes)?;
    let mut sum = 0.0;
    for c in 0..classes {
        let tp = m[[c, c]] as f64;
        let predicted = m.column(c).sum() as f64;
        let actual = m.row(c).sum() as f64;
        if predicted + actual > 0.0 {
            sum += 2.0 * tp / (predicted + actual);
        }
    }
    Ok(sum / classes as f64)
}

/// One-vs-rest AUROC of `scores` for the positive mask, by the rank-sum
/// statistic with average ranks for ties. `None` if one side is empty.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Macro one-vs-rest AUROC over the columns of `scores` (`N × C`). Classes
/// without both a positive and a negative sample are skipped with a warning.
pub fn macro_auroc(scores: ArrayView2<'_, f64>, truth: &[usize]) -> Result<f64, EvalError> {
    check_lengths(scores.nrows(), truth.len())?;
    let classes = scores.ncols();
    if let Some(&label) = truth.iter().find(|&&t| t >= classes) {
        return Err(EvalError::LabelOutOfRange { label, classes });
    }
    let first = truth[0];
    if truth.iter().all(|&t| t == first) {
        return Err(EvalError::DegenerateLabels);
    }
    let mut sum = 0.0;
    let mut used = 0;
    for (c, col) in scores.axis_iter(Axis(1)).enumerate() {
        let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        match binary_auroc(&col.to_vec(), &positive) {
            Some(a) => {
                sum += a;
                used += 1;
            }
            None => log::warn!("auroc: class {c} has no positive or no negative sample, skipped"),
        }
    }
    Ok(sum / used as f64)
}

/// Arithmetic mean of every value.
pub fn overall(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub acc: f64,
    pub f1_macro: f64,
    /// Absent when fewer than two classes occur in the evaluated labels.
    pub auroc_macro: Option<f64>,
}

impl DatasetMetrics {
    /// Metrics from logits or probabilities (`N × C`); predictions are the
    /// row argmax and AUROC uses the row softmax.
    pub fn from_logits(logits: ArrayView2<'_, f64>, truth: &[usize]) -> Result<Self, EvalError> {
        let classes = logits.ncols();
        let pred: Vec<usize> = logits.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
        let probs = softmax_rows(logits);
        let auroc_macro = match macro_auroc(probs.view(), truth) {
            Ok(a) => Some(a),
            Err(EvalError::DegenerateLabels) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            acc: accuracy(&pred, truth)?,
            f1_macro: macro_f1(&pred, truth, classes)?,
            auroc_macro,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.acc, self.f1_macro];
        v.extend(self.auroc_macro);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_dataset: BTreeMap<String, DatasetMetrics>,
    pub overall: f64,
}

impl MetricsReport {
    pub fn new(per_dataset: BTreeMap<String, DatasetMetrics>) -> Result<Self, EvalError> {
        let values: Vec<f64> = per_dataset.values().flat_map(DatasetMetrics::values).collect();
        Ok(Self {
            overall: overall(&values)?,
            per_dataset,
        })
    }
}

pub fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 0], &[1, 2, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(accuracy(&[1], &[1, 2]), Err(EvalError::LengthMismatch(1, 2))));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        let f = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((f - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((f - 0.7333).abs() < 1e-4);
        let absent = macro_f1(&[0, 1, 0], &[0, 1, 0], 3).unwrap();
        assert!((absent - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn auroc_examples() {
        let s = array![[0.9, 0.1], [0.1, 0.9], [0.2, 0.8], [0.3, 0.7]];
        let a = macro_auroc(s.view(), &[0, 1, 0, 1]).unwrap();
        assert!((a - 0.75).abs() < 1e-12);
        let perfect = array![[0.9, 0.1], [0.2, 0.8]];
        assert_eq!(macro_auroc(perfect.view(), &[0, 1]).unwrap(), 1.0);
        assert!(matches!(macro_auroc(perfect.view(), &[1, 1]), Err(EvalError::DegenerateLabels)));
        assert_eq!(binary_auroc(&[0.5, 0.5], &[true, false]), Some(0.5));
    }

    #[test]
    fn auroc_skips_absent_classes() {
        let s = array![[0.8, 0.1, 0.1], [0.3, 0.6, 0.1], [0.7, 0.2, 0.1]];
        assert_eq!(macro_auroc(s.view(), &[0, 1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn overall_examples() {
        let table = [56.1, 85.7, 71.7, 86.8, 96.8, 85.0, 64.2, 91.7, 69.0];
        assert_eq!(format!("{:.1}", overall(&table).unwrap()), "78.6");
        assert_eq!(overall(&[0.4]).unwrap(), 0.4);
        assert!((overall(&[0.3; 5]).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(overall(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn report_from_logits() {
        let logits = array![[2.0, 0.0], [0.0, 2.0], [1.0, 0.0]];
        let m = DatasetMetrics::from_logits(logits.view(), &[0, 1, 1]).unwrap();
        assert!((m.acc - 2.0 / 3.0).abs() < 1e-12);
        let report = MetricsReport::new(BTreeMap::from([("synth".to_string(), m)])).unwrap();
        assert!((report.overall - overall(&m.values()).unwrap()).abs() < 1e-15);
    }
}
