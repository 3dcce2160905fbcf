use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::record::{read_header, read_record};
use super::{zscore_leads, SampleRecord, Split};
use crate::error::DataError;

pub const MANIFEST_HEADER: [&str; 5] = ["record_path", "patient_id", "trial_id", "label", "split"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path as written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub record_path: PathBuf,
    pub patient_id: u64,
    pub trial_id: u64,
    pub label: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// `max(label) + 1`, zero for an unlabelled manifest.
    pub num_classes: usize,
    /// `(S, L)` shared by every record.
    pub shape: (usize, usize),
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.record_path.is_absolute() {
            entry.record_path.clone()
        } else {
            self.root.join(&entry.record_path)
        }
    }

    pub fn patients(&self, split: Option<Split>) -> BTreeSet<u64> {
        self.entries
            .iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .map(|e| e.patient_id)
            .collect()
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Fails with `SplitLeak` if any patient has records in two splits.
    pub fn check_patient_independence(&self) -> Result<(), DataError> {
        let mut seen: BTreeMap<u64, Split> = BTreeMap::new();
        for e in &self.entries {
            match seen.get(&e.patient_id) {
                Some(&s) if s != e.split => {
                    let (first, second) = if s < e.split { (s, e.split) } else { (e.split, s) };
                    return Err(DataError::SplitLeak {
                        patient_id: e.patient_id,
                        first: first.to_string(),
                        second: second.to_string(),
                    });
                }
                Some(_) => {}
                None => {
                    seen.insert(e.patient_id, e.split);
                }
            }
        }
        Ok(())
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> DataError {
    DataError::MalformedManifest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses and validates a manifest: every record header must exist and share
/// one shape, and no patient may straddle splits.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| malformed(path, e.to_string()))?;
    let header = reader.headers().map_err(|e| malformed(path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(malformed(
            path,
            format!("header must be `{}`", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut entries = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| malformed(path, e.to_string()))?;
        let at = |reason: String| malformed(path, format!("row {}: {reason}", line + 1));
        let field = |i: usize| row.get(i).unwrap_or("");
        let record_path = field(0);
        if record_path.is_empty() {
            return Err(at("empty record_path".into()));
        }
        let patient_id = field(1)
            .parse::<u64>()
            .map_err(|e| at(format!("patient_id: {e}")))?;
        let trial_id = field(2)
            .parse::<u64>()
            .map_err(|e| at(format!("trial_id: {e}")))?;
        let label = match field(3) {
            "" => None,
            s => Some(s.parse::<usize>().map_err(|e| at(format!("label: {e}")))?),
        };
        let split = field(4).parse::<Split>().map_err(at)?;
        entries.push(ManifestEntry {
            record_path: PathBuf::from(record_path),
            patient_id,
            trial_id,
            label,
            split,
        });
    }
    if entries.is_empty() {
        return Err(malformed(path, "no records"));
    }

    let mut manifest = DatasetManifest {
        num_classes: entries.iter().filter_map(|e| e.label).max().map_or(0, |m| m + 1),
        entries,
        shape: (0, 0),
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    for (i, entry) in manifest.entries.iter().enumerate() {
        let record = manifest.resolve(entry);
        let h = read_header(&record)?;
        let found = (h.shape[0], h.shape[1]);
        if i == 0 {
            manifest.shape = found;
        } else if found != manifest.shape {
            return Err(DataError::ShapeMismatch {
                path: record,
                expected: manifest.shape,
                found,
            });
        }
    }
    manifest.check_patient_independence()?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| malformed(path, e.to_string()))?;
    let err = |e: csv::Error| malformed(path, e.to_string());
    w.write_record(MANIFEST_HEADER).map_err(err)?;
    for e in entries {
        let label = e.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([
            e.record_path.to_string_lossy().as_ref(),
            &e.patient_id.to_string(),
            &e.trial_id.to_string(),
            &label,
            e.split.as_str(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

/// Loads the records of the given splits (all splits when `splits` is empty).
pub fn load_records(
    manifest: &DatasetManifest,
    splits: &[Split],
    normalize: bool,
) -> Result<Vec<SampleRecord>, DataError> {
    manifest
        .entries
        .iter()
        .filter(|e| splits.is_empty() || splits.contains(&e.split))
        .map(|e| {
            let mut values = read_record(&manifest.resolve(e))?;
            if normalize {
                zscore_leads(&mut values);
            }
            Ok(SampleRecord {
                values,
                patient_id: e.patient_id,
                label: e.label,
                trial_id: e.trial_id,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::write_record;
    use ndarray::Array2;

    fn entry(name: &str, patient: u64, label: Option<usize>, split: Split) -> ManifestEntry {
        ManifestEntry {
            record_path: PathBuf::from(name),
            patient_id: patient,
            trial_id: 0,
            label,
            split,
        }
    }

    #[test]
    fn loads_consistent_manifest() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.rec", "b.rec", "c.rec"] {
            write_record(&dir.path().join(name), &Array2::ones((300, 12))).unwrap();
        }
        let entries = vec![
            entry("a.rec", 1, Some(0), Split::Train),
            entry("b.rec", 2, Some(2), Split::Valid),
            entry("c.rec", 3, Some(1), Split::Test),
        ];
        let path = dir.path().join("manifest.csv");
        write_manifest(&path, &entries).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.shape, (300, 12));
        assert_eq!(m.num_classes, 3);
        assert_eq!(m.entries, entries);
        let recs = load_records(&m, &[Split::Train], false).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].patient_id, 1);
    }

    #[test]
    fn shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_record(&dir.path().join("a.rec"), &Array2::ones((300, 12))).unwrap();
        write_record(&dir.path().join("b.rec"), &Array2::ones((299, 12))).unwrap();
        write_record(&dir.path().join("c.rec"), &Array2::ones((300, 12))).unwrap();
        let path = dir.path().join("m.csv");
        write_manifest(
            &path,
            &[
                entry("a.rec", 1, None, Split::Train),
                entry("b.rec", 2, None, Split::Train),
                entry("c.rec", 3, None, Split::Train),
            ],
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(
            matches!(err, DataError::ShapeMismatch { found: (299, 12), expected: (300, 12), .. }),
            "{err}"
        );
    }

    #[test]
    fn split_leak_names_patient() {
        let dir = tempfile::tempdir().unwrap();
        write_record(&dir.path().join("a.rec"), &Array2::ones((10, 2))).unwrap();
        write_record(&dir.path().join("b.rec"), &Array2::ones((10, 2))).unwrap();
        let path = dir.path().join("m.csv");
        write_manifest(
            &path,
            &[entry("a.rec", 7, Some(0), Split::Train), entry("b.rec", 7, Some(1), Split::Test)],
        )
        .unwrap();
        match load_manifest(&path).unwrap_err() {
            DataError::SplitLeak { patient_id, .. } => assert_eq!(patient_id, 7),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        assert!(matches!(load_manifest(&path), Err(DataError::MissingFile(_))));
        std::fs::write(&path, "path,patient\nx,1\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::MalformedManifest { .. })));
        std::fs::write(&path, "record_path,patient_id,trial_id,label,split\nx.rec,1,0,,holdout\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::MalformedManifest { .. })));
        std::fs::write(&path, "record_path,patient_id,trial_id,label,split\nx.rec,1,0,,train\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::MissingFile(_))));
    }
}
