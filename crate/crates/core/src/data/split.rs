use std::collections::BTreeMap;

use ndarray::s;
use rand::seq::SliceRandom;

use super::{DatasetManifest, SampleRecord, Split, Trial};
use crate::error::DataError;
use crate::rng::{self, Stream};

/// Cuts a trial into `⌊T/S⌋` consecutive, non-overlapping segments of length
/// `sample_len`; the trailing `T mod S` rows are dropped.
pub fn segment_trials(trial: &Trial, sample_len: usize) -> Result<Vec<SampleRecord>, DataError> {
    let len = trial.values.nrows();
    if sample_len == 0 {
        return Err(DataError::InvalidArgument("sample_len must be positive".into()));
    }
    if len < sample_len {
        return Err(DataError::TrialTooShort { len, sample_len });
    }
    Ok((0..len / sample_len)
        .map(|i| SampleRecord {
            values: trial
                .values
                .slice(s![i * sample_len..(i + 1) * sample_len, ..])
                .to_owned(),
            patient_id: trial.patient_id,
            label: trial.label,
            trial_id: trial.trial_id,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    /// `(train, valid, test)` patient counts: valid and test get
    /// `max(1, ⌊f·n⌋)`, train takes the remainder.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize), DataError> {
        if n < 3 {
            return Err(DataError::TooFewPatients(n));
        }
        let take = |f: f64| ((f * n as f64 + 1e-9).floor() as usize).max(1);
        let valid = take(self.valid);
        let test = take(self.test);
        if valid + test >= n {
            return Err(DataError::InvalidArgument(format!(
                "fractions {self:?} leave no training patients out of {n}"
            )));
        }
        Ok((n - valid - test, valid, test))
    }
}

/// Reassigns splits by patient: the sorted patient IDs are shuffled with
/// `seed` and cut into train/valid/test groups.
pub fn patient_split(
    manifest: &DatasetManifest,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    let mut patients: Vec<u64> = manifest.patients(None).into_iter().collect();
    let (train, valid, _) = fractions.counts(patients.len())?;
    patients.shuffle(&mut rng::stream(seed, Stream::Split, &[]));
    let assignment: BTreeMap<u64, Split> = patients
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let split = if i < train {
                Split::Train
            } else if i < train + valid {
                Split::Valid
            } else {
                Split::Test
            };
            (p, split)
        })
        .collect();
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.split = assignment[&e.patient_id];
    }
    Ok(out)
}

fn target_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n)
}

fn check_ratio(ratio: f64) -> Result<(), DataError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(DataError::InvalidArgument(format!("label ratio {ratio} outside (0, 1]")));
    }
    Ok(())
}

/// Uniform random subset of `max(1, round(ratio·N))` items, kept in input order.
pub fn subsample_labels<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<Vec<T>, DataError> {
    check_ratio(ratio)?;
    if items.is_empty() {
        return Err(DataError::EmptyTrainSet);
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Subsample, &[]));
    idx.truncate(target_count(items.len(), ratio));
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| items[i].clone()).collect())
}

/// Per-class variant: each label class keeps `max(1, round(ratio·n_c))` records.
pub fn subsample_stratified(
    records: &[SampleRecord],
    ratio: f64,
    seed: u64,
) -> Result<Vec<SampleRecord>, DataError> {
    check_ratio(ratio)?;
    if records.is_empty() {
        return Err(DataError::EmptyTrainSet);
    }
    let mut by_class: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    let mut keep = Vec::new();
    for (class, mut idx) in by_class {
        let tag = class.map_or(u64::MAX, |c| c as u64);
        idx.shuffle(&mut rng::stream(seed, Stream::Subsample, &[tag]));
        idx.truncate(target_count(idx.len(), ratio));
        keep.extend(idx);
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| records[i].clone()).collect())
}
