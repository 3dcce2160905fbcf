//! Record container: 8-byte magic `PMQREC01`, u32 little-endian header length,
//! UTF-8 JSON header `{"shape":[S,L],"dtype":"f32"}`, then `S*L` little-endian
//! f32 values, time-major (all leads of timestamp 0, then timestamp 1, ...).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::DataError;

pub const RECORD_MAGIC: &[u8; 8] = b"PMQREC01";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub shape: [usize; 2],
    pub dtype: String,
}

fn malformed(path: &Path, reason: impl Into<String>) -> DataError {
    DataError::MalformedRecord {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_header_from<R: Read>(path: &Path, r: &mut R) -> Result<RecordHeader, DataError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| DataError::io(path, e))?;
    if &magic != RECORD_MAGIC {
        return Err(malformed(path, "bad magic"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|e| DataError::io(path, e))?;
    let len = u32::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|e| DataError::io(path, e))?;
    let header: RecordHeader =
        serde_json::from_slice(&json).map_err(|e| malformed(path, format!("header: {e}")))?;
    if header.dtype != "f32" {
        return Err(malformed(path, format!("unsupported dtype {}", header.dtype)));
    }
    Ok(header)
}

pub fn read_header(path: &Path) -> Result<RecordHeader, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_header_from(path, &mut BufReader::new(file))
}

pub fn read_record(path: &Path) -> Result<Array2<f32>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header_from(path, &mut r)?;
    let [rows, cols] = header.shape;
    let mut raw = vec![0u8; rows * cols * 4];
    r.read_exact(&mut raw)
        .map_err(|_| malformed(path, "truncated data section"))?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFinite(path.display().to_string()));
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| malformed(path, e.to_string()))
}

pub fn write_record(path: &Path, values: &Array2<f32>) -> Result<(), DataError> {
    let header = RecordHeader {
        shape: [values.nrows(), values.ncols()],
        dtype: "f32".into(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| DataError::io(path, e);
    w.write_all(RECORD_MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for v in values.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.rec");
        let values = array![[1.0f32, 2.0], [3.0, 4.0], [5.0, 6.0]];
        write_record(&path, &values).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let json = br#"{"shape":[3,2],"dtype":"f32"}"#;
        assert_eq!(&bytes[..8], b"PMQREC01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, json.len());
        assert_eq!(&bytes[12..12 + json.len()], json);
        let data = &bytes[12 + json.len()..];
        assert_eq!(data.len(), 24);
        // time-major: row 1 (3.0, 4.0) follows row 0
        assert_eq!(f32::from_le_bytes(data[8..12].try_into().unwrap()), 3.0);
        assert_eq!(read_record(&path).unwrap(), values);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.rec");
        std::fs::write(&path, b"NOTMAGIC0000").unwrap();
        assert!(matches!(read_header(&path), Err(DataError::MalformedRecord { .. })));

        write_record(&path, &Array2::zeros((4, 2))).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_record(&path), Err(DataError::MalformedRecord { .. })));
    }

    #[test]
    fn missing_file() {
        let err = read_header(Path::new("/nonexistent/x.rec")).unwrap_err();
        assert!(matches!(err, DataError::MissingFile(_)));
    }
}
