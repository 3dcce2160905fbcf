use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};

use crate::error::PclError;
use crate::nn::Scalar;

/// Tolerance on `‖k‖ - 1` for stored keys.
pub const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry<'a> {
    pub patient_id: u64,
    pub key: &'a [f32],
}

/// FIFO of `(patient_id, unit key)` pairs backed by a ring of `capacity + slack`
/// slots, so a batch can be enqueued before the matching dequeue without
/// reallocating. `capacity` is `M`; `slack` is the batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientMemoryQueue {
    capacity: usize,
    slack: usize,
    dim: usize,
    patient_ids: Vec<u64>,
    keys: Vec<f32>,
    /// Ring slot of the oldest entry.
    head: usize,
    len: usize,
}

impl PatientMemoryQueue {
    pub fn new(capacity: usize, slack: usize, dim: usize) -> Self {
        let slots = capacity + slack;
        Self {
            capacity,
            slack,
            dim,
            patient_ids: vec![0; slots],
            keys: vec![0.0; slots * dim],
            head: 0,
            len: 0,
        }
    }

    /// Rebuilds a queue from its raw ring storage (checkpoint restore).
    pub fn from_raw(
        capacity: usize,
        slack: usize,
        dim: usize,
        patient_ids: Vec<u64>,
        keys: Vec<f32>,
        head: usize,
        len: usize,
    ) -> Result<Self, PclError> {
        let slots = capacity + slack;
        if patient_ids.len() != slots || keys.len() != slots * dim || (slots > 0 && head >= slots) || len > slots {
            return Err(PclError::DimMismatch {
                expected: slots * dim,
                found: keys.len(),
            });
        }
        Ok(Self {
            capacity,
            slack,
            dim,
            patient_ids,
            keys,
            head,
            len,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Ring slot of the oldest entry, the write cursor is `head + len`.
    pub fn head(&self) -> usize {
        self.head
    }

    pub fn raw_patient_ids(&self) -> &[u64] {
        &self.patient_ids
    }

    pub fn raw_keys(&self) -> &[f32] {
        &self.keys
    }

    fn slots(&self) -> usize {
        self.capacity + self.slack
    }

    fn slot(&self, i: usize) -> usize {
        (self.head + i) % self.slots()
    }

    /// Entry `i` in FIFO order (0 is the oldest).
    pub fn get(&self, i: usize) -> Option<QueueEntry<'_>> {
        (i < self.len).then(|| {
            let s = self.slot(i);
            QueueEntry {
                patient_id: self.patient_ids[s],
                key: &self.keys[s * self.dim..(s + 1) * self.dim],
            }
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = QueueEntry<'_>> {
        (0..self.len).map(move |i| self.get(i).expect("index in range"))
    }

    pub fn patient_ids(&self) -> Vec<u64> {
        self.iter().map(|e| e.patient_id).collect()
    }

    /// Keys in FIFO order as a `(len, dim)` matrix.
    pub fn keys_matrix<T: Scalar>(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.len, self.dim));
        for (mut row, e) in out.rows_mut().into_iter().zip(self.iter()) {
            for (o, &k) in row.iter_mut().zip(e.key) {
                *o = <T as Scalar>::from_f32(k);
            }
        }
        out
    }

    /// Appends the batch in order. Rows must be unit-norm; storage is `f32`.
    pub fn enqueue<T: Scalar>(&mut self, patient_ids: &[u64], keys: ArrayView2<'_, T>) -> Result<(), PclError> {
        if keys.ncols() != self.dim {
            return Err(PclError::DimMismatch {
                expected: self.dim,
                found: keys.ncols(),
            });
        }
        assert_eq!(patient_ids.len(), keys.nrows(), "one patient id per key row");
        if self.len + keys.nrows() > self.slots() {
            return Err(PclError::Overflow {
                len: self.len,
                capacity: self.capacity,
                batch: keys.nrows(),
            });
        }
        for (row, k) in keys.rows().into_iter().enumerate() {
            let norm = k.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(PclError::NormViolation { row, norm });
            }
        }
        for (&pid, k) in patient_ids.iter().zip(keys.rows()) {
            let s = self.slot(self.len);
            self.patient_ids[s] = pid;
            for (dst, &v) in self.keys[s * self.dim..(s + 1) * self.dim].iter_mut().zip(k.iter()) {
                *dst = v.to_f32();
            }
            self.len += 1;
        }
        Ok(())
    }

    /// Removes the `count` oldest entries.
    pub fn dequeue(&mut self, count: usize) -> Result<(), PclError> {
        if count > self.len {
            return Err(PclError::Underflow {
                requested: count,
                len: self.len,
            });
        }
        if count > 0 {
            self.head = self.slot(count);
            self.len -= count;
        }
        Ok(())
    }

    /// Dequeues whatever exceeds the capacity; returns how many were removed.
    pub fn trim(&mut self) -> usize {
        let excess = self.len.saturating_sub(self.capacity);
        self.dequeue(excess).expect("excess never exceeds len");
        excess
    }

    /// FIFO indices of every entry whose patient is `patient_id`.
    pub fn positives_for(&self, patient_id: u64) -> Vec<usize> {
        self.iter()
            .enumerate()
            .filter(|(_, e)| e.patient_id == patient_id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Positive index sets for every distinct patient in the queue.
    pub fn positives_index(&self) -> HashMap<u64, Vec<usize>> {
        let mut map: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, e) in self.iter().enumerate() {
            map.entry(e.patient_id).or_default().push(i);
        }
        map
    }
}
