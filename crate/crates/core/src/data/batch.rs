use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;

use super::SampleRecord;
use crate::rng::{self, Stream};

/// `values` is `(B, S, L)`; `indices[i]` is the position of row `i` in the
/// record slice the batch was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub values: Array3<f32>,
    pub patient_ids: Vec<u64>,
    pub labels: Option<Vec<usize>>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patient_ids.is_empty()
    }

    pub fn from_records(records: &[SampleRecord], indices: &[usize]) -> Self {
        let (s, l) = records[indices[0]].shape();
        let mut values = Array3::zeros((indices.len(), s, l));
        for (mut row, &i) in values.axis_iter_mut(Axis(0)).zip(indices) {
            row.assign(&records[i].values);
        }
        let labels: Option<Vec<usize>> = indices.iter().map(|&i| records[i].label).collect();
        Self {
            values,
            patient_ids: indices.iter().map(|&i| records[i].patient_id).collect(),
            labels,
            indices: indices.to_vec(),
        }
    }
}

pub struct BatchIter<'a> {
    records: &'a [SampleRecord],
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    drop_last: bool,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let remaining = self.order.len() - self.pos;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let end = self.pos + remaining.min(self.batch_size);
        let batch = Batch::from_records(self.records, &self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// Batches over a seed-shuffled permutation of `records`.
///
/// # Panics
/// If `batch_size` is zero.
pub fn iter_batches(records: &[SampleRecord], batch_size: usize, seed: u64, drop_last: bool) -> BatchIter<'_> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Shuffle, &[]));
    BatchIter {
        records,
        order,
        batch_size,
        pos: 0,
        drop_last,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn records(n: usize) -> Vec<SampleRecord> {
        (0..n)
            .map(|i| SampleRecord {
                values: Array2::from_elem((3, 2), i as f32),
                patient_id: (i % 4) as u64,
                label: Some(i % 2),
                trial_id: i as u64,
            })
            .collect()
    }

    #[test]
    fn batch_sizes() {
        let r = records(10);
        let sizes: Vec<usize> = iter_batches(&r, 4, 1, true).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4]);
        let sizes: Vec<usize> = iter_batches(&r, 4, 1, false).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(iter_batches(&[], 4, 1, false).count(), 0);
    }

    #[test]
    fn deterministic_and_consistent_rows() {
        let r = records(10);
        let a: Vec<Batch> = iter_batches(&r, 3, 9, false).collect();
        let b: Vec<Batch> = iter_batches(&r, 3, 9, false).collect();
        assert_eq!(a, b);
        for batch in &a {
            for (row, &i) in batch.indices.iter().enumerate() {
                assert_eq!(batch.patient_ids[row], r[i].patient_id);
                assert_eq!(batch.values[[row, 0, 0]], i as f32);
            }
        }
    }

    #[test]
    fn unlabeled_rows_drop_labels() {
        let mut r = records(4);
        r[2].label = None;
        let labels: Vec<_> = iter_batches(&r, 4, 0, false).map(|b| b.labels).collect();
        assert_eq!(labels, vec![None]);
    }

    proptest! {
        #[test]
        fn conservation(n in 0usize..60, b in 1usize..9, seed in any::<u64>()) {
            let r = records(n);
            let mut seen: Vec<usize> = iter_batches(&r, b, seed, false).flat_map(|b| b.indices).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
