//! Synthetic multi-lead corpora with patient structure.
//!
//! Each patient owns a signature: 2–4 sinusoids with patient-specific
//! frequencies, phases and per-lead gains. Each class owns one sinusoid with a
//! class-specific frequency and per-lead gains shared by all patients. A trial
//! is signature + class component, both shifted by a per-trial phase, plus
//! Gaussian noise. Trials are segmented into `(sample_len, leads)` records.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{load_manifest, write_manifest};
use super::record::write_record;
use super::split::{patient_split, segment_trials, SplitFractions};
use super::{DatasetManifest, ManifestEntry, Split, Trial};
use crate::error::DataError;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_patients: usize,
    pub trials_per_patient: usize,
    pub trial_len: usize,
    pub leads: usize,
    pub num_classes: usize,
    pub sample_len: usize,
    pub noise_std: f64,
    /// Probability that a trial carries its patient's base class rather than a
    /// uniformly drawn one.
    pub class_consistency: f64,
    /// Amplitude of the class component relative to the signature sinusoids.
    pub class_amplitude: f64,
    pub phase_jitter: bool,
    pub seed: u64,
    /// Patient-level split applied when there are at least three patients.
    pub fractions: SplitFractions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_patients: 20,
            trials_per_patient: 4,
            trial_len: 600,
            leads: 12,
            num_classes: 4,
            sample_len: 300,
            noise_std: 0.1,
            class_consistency: 0.75,
            class_amplitude: 1.0,
            phase_jitter: true,
            seed: 41,
            fractions: SplitFractions::default(),
        }
    }
}

struct Component {
    freq: f64,
    phase: f64,
    gains: Vec<f64>,
}

fn patient_signature(cfg: &SynthConfig, patient: u64) -> Vec<Component> {
    let mut r = rng::stream(cfg.seed, Stream::Synth, &[0, patient]);
    let n = r.random_range(2..=4);
    (0..n)
        .map(|_| Component {
            freq: r.random_range(0.01..0.15),
            phase: r.random_range(0.0..TAU),
            gains: (0..cfg.leads).map(|_| r.random_range(0.3..1.0)).collect(),
        })
        .collect()
}

fn class_component(cfg: &SynthConfig, class: usize) -> Component {
    let mut r = rng::stream(cfg.seed, Stream::Synth, &[1, class as u64]);
    let c = cfg.num_classes.max(1) as f64;
    Component {
        freq: 0.02 + 0.12 * (class as f64 + 0.5) / c,
        phase: r.random_range(0.0..TAU),
        gains: (0..cfg.leads)
            .map(|_| cfg.class_amplitude * r.random_range(0.5..1.0))
            .collect(),
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), DataError> {
        let counts = [
            self.num_patients,
            self.trials_per_patient,
            self.trial_len,
            self.leads,
            self.num_classes,
            self.sample_len,
        ];
        if counts.contains(&0) {
            return Err(DataError::InvalidArgument("synthetic counts must all be >= 1".into()));
        }
        if self.noise_std < 0.0 || !(0.0..=1.0).contains(&self.class_consistency) {
            return Err(DataError::InvalidArgument("noise_std >= 0 and class_consistency in [0,1]".into()));
        }
        Ok(())
    }

    /// Generates one trial; deterministic in `(seed, patient, trial)`.
    pub fn trial(&self, patient: u64, trial: u64) -> Trial {
        let signature = patient_signature(self, patient);
        let mut r = rng::stream(self.seed, Stream::Synth, &[2, patient, trial]);
        let base = (patient as usize) % self.num_classes;
        let label = if r.random::<f64>() < self.class_consistency {
            base
        } else {
            r.random_range(0..self.num_classes)
        };
        let shift = if self.phase_jitter { r.random_range(0.0..TAU) } else { 0.0 };
        let class = class_component(self, label);
        let noise = Normal::new(0.0, self.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
        let values = Array2::from_shape_fn((self.trial_len, self.leads), |(t, l)| {
            let t = t as f64;
            let mut v = 0.0;
            for c in signature.iter().chain(std::iter::once(&class)) {
                v += c.gains[l] * (TAU * c.freq * t + c.phase + shift).sin();
            }
            v
        });
        // noise is drawn after the deterministic part so that σ only adds a term
        let values = values.mapv(|v| {
            let n = if self.noise_std > 0.0 { noise.sample(&mut r) } else { 0.0 };
            (v + n) as f32
        });
        Trial {
            values,
            patient_id: patient,
            trial_id: trial,
            label: Some(label),
        }
    }
}

/// Writes records under `out_dir/records/` and a manifest at
/// `out_dir/manifest.csv`, split 80/10/10 by patient (all train if fewer than
/// three patients). Returns the validated manifest.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest, DataError> {
    cfg.validate()?;
    let records_dir = out_dir.join("records");
    std::fs::create_dir_all(&records_dir).map_err(|e| DataError::io(&records_dir, e))?;
    let mut entries = Vec::new();
    for patient in 0..cfg.num_patients as u64 {
        for trial in 0..cfg.trials_per_patient as u64 {
            let t = cfg.trial(patient, trial);
            for (seg, record) in segment_trials(&t, cfg.sample_len)?.into_iter().enumerate() {
                let rel = PathBuf::from("records").join(format!("p{patient:05}_t{trial:03}_s{seg:03}.rec"));
                write_record(&out_dir.join(&rel), &record.values)?;
                entries.push(ManifestEntry {
                    record_path: rel,
                    patient_id: patient,
                    trial_id: trial,
                    label: record.label,
                    split: Split::Train,
                });
            }
        }
    }
    let mut manifest = DatasetManifest {
        entries,
        num_classes: cfg.num_classes,
        shape: (cfg.sample_len, cfg.leads),
        root: out_dir.to_path_buf(),
    };
    if cfg.num_patients >= 3 {
        manifest = patient_split(&manifest, cfg.fractions, cfg.seed)?;
    }
    let path = out_dir.join("manifest.csv");
    write_manifest(&path, &manifest.entries)?;
    load_manifest(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            num_patients: 20,
            trials_per_patient: 2,
            trial_len: 64,
            leads: 3,
            num_classes: 4,
            sample_len: 32,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic(&small(41), a.path()).unwrap();
        generate_synthetic(&small(41), b.path()).unwrap();
        assert_eq!(ma.entries.len(), 20 * 2 * 2);
        for e in &ma.entries {
            let x = std::fs::read(a.path().join(&e.record_path)).unwrap();
            let y = std::fs::read(b.path().join(&e.record_path)).unwrap();
            assert_eq!(x, y);
        }
        assert_eq!(
            std::fs::read(a.path().join("manifest.csv")).unwrap(),
            std::fs::read(b.path().join("manifest.csv")).unwrap()
        );
        ma.check_patient_independence().unwrap();
        assert_eq!(ma.shape, (32, 3));
    }

    #[test]
    fn noiseless_trials_differ_only_by_phase() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            class_consistency: 1.0,
            ..small(5)
        };
        let jittered = (cfg.trial(3, 0), cfg.trial(3, 1));
        assert_eq!(jittered.0.label, jittered.1.label);
        assert_ne!(jittered.0.values, jittered.1.values);
        let fixed = SynthConfig {
            phase_jitter: false,
            ..cfg
        };
        assert_eq!(fixed.trial(3, 0).values, fixed.trial(3, 1).values);
        assert_ne!(fixed.trial(3, 0).values, fixed.trial(4, 0).values);
    }

    #[test]
    fn single_patient_single_class() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            num_patients: 1,
            num_classes: 1,
            ..small(1)
        };
        let m = generate_synthetic(&cfg, dir.path()).unwrap();
        assert_eq!(m.patients(None).len(), 1);
        assert_eq!(m.num_classes, 1);
    }
}
