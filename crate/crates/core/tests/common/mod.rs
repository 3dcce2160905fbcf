#![allow(dead_code)]

use std::path::Path;

use pmq::config::RunConfig;
use pmq::data::{generate_synthetic, load_records, DatasetManifest, SampleRecord, Split};

/// Small model and data settings shared by the training tests.
pub fn tiny(dir: &Path, extra: &[(&str, &str)]) -> RunConfig {
    let manifest = dir.join("manifest.csv").display().to_string();
    let mut pairs: Vec<(&str, &str)> = vec![
        ("data.manifest", &manifest),
        ("data.num_patients", "16"),
        ("data.trials_per_patient", "2"),
        ("data.trial_len", "64"),
        ("data.leads", "2"),
        ("data.sample_len", "32"),
        ("data.num_classes", "2"),
        ("model.input_leads", "2"),
        ("model.hidden_dim", "8"),
        ("model.output_dim", "16"),
        ("model.num_blocks", "2"),
        ("model.classifier_hidden", "16"),
        ("pcl.queue_size", "32"),
        ("train.batch_size", "8"),
        ("train.epochs", "2"),
        ("train.finetune_epochs", "2"),
        ("train.checkpoint_every", "0"),
    ];
    pairs.extend_from_slice(extra);
    let cfg = RunConfig::default().with(&pairs).unwrap();
    cfg.validate().unwrap();
    cfg
}

pub fn synth(cfg: &RunConfig, dir: &Path) -> DatasetManifest {
    generate_synthetic(&cfg.data.synth(), dir).unwrap()
}

pub fn all_records(m: &DatasetManifest) -> Vec<SampleRecord> {
    load_records(m, &Split::ALL, true).unwrap()
}

/// Two classes told apart by the frequency of a single sinusoid, with random
/// phase and small noise; 40 patients split 32/4/4.
pub fn separable(dir: &Path, sample_len: usize, leads: usize) -> DatasetManifest {
    use ndarray::Array2;
    use pmq::data::record::write_record;
    use pmq::data::{load_manifest, write_manifest, ManifestEntry};
    use rand::{Rng, SeedableRng};

    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    std::fs::create_dir_all(dir.join("records")).unwrap();
    let mut entries = Vec::new();
    for p in 0..40u64 {
        let split = match p {
            0..32 => Split::Train,
            32..36 => Split::Valid,
            _ => Split::Test,
        };
        let label = (p % 2) as usize;
        let freq = [0.05, 0.2][label];
        for trial in 0..4u64 {
            let phase = r.random_range(0.0..std::f64::consts::TAU);
            let values = Array2::from_shape_fn((sample_len, leads), |(t, _)| {
                ((std::f64::consts::TAU * freq * t as f64 + phase).sin() + 0.05 * r.random_range(-1.0..1.0)) as f32
            });
            let rel = format!("records/p{p}_t{trial}.rec");
            write_record(&dir.join(&rel), &values).unwrap();
            entries.push(ManifestEntry {
                record_path: rel.into(),
                patient_id: p,
                trial_id: trial,
                label: Some(label),
                split,
            });
        }
    }
    write_manifest(&dir.join("manifest.csv"), &entries).unwrap();
    load_manifest(&dir.join("manifest.csv")).unwrap()
}
