//! ECG records, manifests, splits and batching.
//!
//! On disk a dataset is a CSV manifest (`record_path,patient_id,trial_id,label,split`)
//! pointing at record files, each one fixed-length `(S, L)` segment stored in the
//! `PMQREC01` container (see [`record`]).

mod batch;
mod manifest;
pub mod record;
mod split;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use batch::{iter_batches, Batch, BatchIter};
pub use manifest::{load_manifest, load_records, write_manifest, DatasetManifest, ManifestEntry};
pub use split::{patient_split, segment_trials, subsample_labels, subsample_stratified, SplitFractions};
pub use synth::{generate_synthetic, SynthConfig};

/// One fixed-length multi-lead segment, `values` is `(S, L)` time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub values: Array2<f32>,
    pub patient_id: u64,
    pub label: Option<usize>,
    pub trial_id: u64,
}

impl SampleRecord {
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// A full recording before segmentation, `values` is `(T, L)`.
#[derive(Debug, Clone)]
pub struct Trial {
    pub values: Array2<f32>,
    pub patient_id: u64,
    pub trial_id: u64,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Per-lead z-score: `(x - mean) / (std + 1e-8)`.
pub fn zscore_leads(values: &mut Array2<f32>) {
    let rows = values.nrows() as f64;
    for mut lead in values.columns_mut() {
        let mean = lead.iter().map(|&v| v as f64).sum::<f64>() / rows;
        let var = lead.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / rows;
        let denom = var.sqrt() + 1e-8;
        lead.mapv_inplace(|v| ((v as f64 - mean) / denom) as f32);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zscore_gives_zero_mean_unit_std() {
        let mut v = array![[1.0f32, 5.0], [2.0, 5.0], [3.0, 5.0], [6.0, 5.0]];
        zscore_leads(&mut v);
        let col = v.column(0);
        let mean: f32 = col.sum() / 4.0;
        let var: f32 = col.iter().map(|x| (x - mean).powi(2)).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
        // constant lead stays finite
        assert!(v.column(1).iter().all(|x| *x == 0.0));
    }
}
