//! Single-file checkpoint container.
//!
//! Layout: the 8-byte magic `PMQCKPT1`, a little-endian `u32` byte length of a
//! JSON header, the header, then every array's raw little-endian data back to
//! back. The header holds free-form metadata plus an index of named arrays with
//! their shapes, dtypes and byte offsets into the data section. Arrays are
//! `f32` except integer identifiers, which are `i64`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::CheckpointError;
use crate::nn::{Params, Scalar};
use crate::pcl::{PatientMemoryQueue, PmqState};

pub const MAGIC: &[u8; 8] = b"PMQCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::I64(_) => "i64",
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::I64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: Value,
    arrays: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    pub arrays: Vec<NamedArray>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn new(meta: Value) -> Self {
        Self {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: ArrayData) {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape of {name}");
        self.arrays.push(NamedArray { name, shape, data });
    }

    pub fn push_f32<T: Scalar>(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[T]) {
        self.push(name, shape, ArrayData::F32(data.iter().map(|v| Scalar::to_f32(*v)).collect()));
    }

    /// Every parameter and buffer of `model`, named `prefix.<name>`.
    pub fn push_params<T: Scalar, P: Params<T>>(&mut self, prefix: &str, model: &P) {
        for p in model.params().into_iter().chain(model.buffers()) {
            self.push_f32(format!("{prefix}.{}", p.name), p.shape, p.data);
        }
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray, CheckpointError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| CheckpointError::MissingArray(name.to_string()))
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.arrays.iter().any(|a| a.name.starts_with(prefix))
    }

    pub fn f32s(&self, name: &str, shape: &[usize]) -> Result<&[f32], CheckpointError> {
        let a = self.array(name)?;
        match &a.data {
            ArrayData::F32(v) if a.shape == shape => Ok(v),
            _ => Err(CheckpointError::ArrayShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: a.shape.clone(),
            }),
        }
    }

    pub fn i64s(&self, name: &str, len: usize) -> Result<&[i64], CheckpointError> {
        let a = self.array(name)?;
        match &a.data {
            ArrayData::I64(v) if v.len() == len => Ok(v),
            _ => Err(CheckpointError::ArrayShape {
                name: name.to_string(),
                expected: vec![len],
                found: a.shape.clone(),
            }),
        }
    }

    /// Restores every parameter and buffer of `model` from `prefix.<name>`.
    pub fn load_params<T: Scalar, P: Params<T>>(&self, prefix: &str, model: &mut P) -> Result<(), CheckpointError> {
        let shapes: Vec<Vec<usize>> = model.params().into_iter().chain(model.buffers()).map(|p| p.shape).collect();
        let mut i = 0;
        for p in model.params_mut() {
            let src = self.f32s(&format!("{prefix}.{}", p.name), &shapes[i])?;
            for (d, &s) in p.data.iter_mut().zip(src) {
                *d = <T as Scalar>::from_f32(s);
            }
            i += 1;
        }
        for p in model.buffers_mut() {
            let src = self.f32s(&format!("{prefix}.{}", p.name), &shapes[i])?;
            for (d, &s) in p.data.iter_mut().zip(src) {
                *d = <T as Scalar>::from_f32(s);
            }
            i += 1;
        }
        Ok(())
    }

    fn encode(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let mut index = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            index.push(IndexEntry {
                name: a.name.clone(),
                shape: a.shape.clone(),
                dtype: a.data.dtype().into(),
                offset,
            });
            offset += match &a.data {
                ArrayData::F32(v) => 4 * v.len() as u64,
                ArrayData::I64(v) => 8 * v.len() as u64,
            };
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            arrays: index,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            match &a.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    /// Writes to a sibling temporary file and renames it over `path`.
    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut tmp = PathBuf::from(path);
        tmp.as_mut_os_string().push(".tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.encode()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes, path)
    }

    fn decode(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(malformed(path, "bad magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| malformed(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| malformed(path, e.to_string()))?;
        let data = &bytes[12 + hlen..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            let width = match e.dtype.as_str() {
                "f32" => 4,
                "i64" => 8,
                other => return Err(malformed(path, format!("unknown dtype {other} for {}", e.name))),
            };
            let start = e.offset as usize;
            let raw = data
                .get(start..start + width * n)
                .ok_or_else(|| malformed(path, format!("array {} runs past the end", e.name)))?;
            let values = if width == 4 {
                ArrayData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
            } else {
                ArrayData::I64(raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
            };
            arrays.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data: values,
            });
        }
        Ok(Self {
            meta: header.meta,
            arrays,
        })
    }
}

/// Checkpoint of a full pretraining state. `meta` must be a JSON object; the
/// state fields are added to it.
pub fn pretrain_checkpoint(state: &PmqState<f32>, config: &RunConfig, mut meta: Value) -> Checkpoint {
    let q = &state.queue;
    let extra = serde_json::json!({
        "kind": "pretrain",
        "config": config,
        "step": state.step,
        "epoch": state.epoch,
        "optimizer_step": state.optimizer.step,
        "queue": {
            "capacity": q.capacity(),
            "slack": q.slack(),
            "dim": q.dim(),
            "head": q.head(),
            "len": q.len(),
        },
    });
    let obj = meta.as_object_mut().expect("checkpoint metadata is an object");
    for (k, v) in extra.as_object().expect("object") {
        obj.insert(k.clone(), v.clone());
    }
    let mut ck = Checkpoint::new(meta);
    ck.push_params("query", &state.query);
    ck.push_params("key", &state.key);
    let opt = &state.optimizer;
    for (i, name) in opt.names.iter().enumerate() {
        ck.push_f32(format!("opt.m.{name}"), vec![opt.m[i].len()], &opt.m[i]);
        ck.push_f32(format!("opt.v.{name}"), vec![opt.v[i].len()], &opt.v[i]);
    }
    let slots = q.capacity() + q.slack();
    ck.push(
        "queue.patient_ids",
        vec![slots],
        ArrayData::I64(q.raw_patient_ids().iter().map(|&p| p as i64).collect()),
    );
    ck.push_f32("queue.keys", vec![slots, q.dim()], q.raw_keys());
    ck
}

fn meta_u64(ck: &Checkpoint, path: &[&str]) -> Result<u64, CheckpointError> {
    let mut v = &ck.meta;
    for p in path {
        v = &v[*p];
    }
    v.as_u64().ok_or_else(|| CheckpointError::MissingArray(format!("meta.{}", path.join("."))))
}

/// Rebuilds the pretraining state and its config from a checkpoint.
pub fn restore_pretrain(ck: &Checkpoint, path: &Path) -> Result<(PmqState<f32>, RunConfig), CheckpointError> {
    if ck.meta["kind"] != "pretrain" {
        return Err(malformed(path, "not a pretraining checkpoint"));
    }
    let config: RunConfig =
        serde_json::from_value(ck.meta["config"].clone()).map_err(|e| malformed(path, format!("config: {e}")))?;
    let mut state = PmqState::<f32>::new(
        &config.model,
        &config.pcl,
        config.train.batch_size,
        config.train.weight_decay,
        config.train.seed,
    );
    ck.load_params("query", &mut state.query)?;
    ck.load_params("key", &mut state.key)?;
    let opt = &mut state.optimizer;
    for i in 0..opt.names.len() {
        let len = opt.m[i].len();
        opt.m[i].copy_from_slice(ck.f32s(&format!("opt.m.{}", opt.names[i]), &[len])?);
        opt.v[i].copy_from_slice(ck.f32s(&format!("opt.v.{}", opt.names[i]), &[len])?);
    }
    opt.step = meta_u64(ck, &["optimizer_step"])?;
    let capacity = meta_u64(ck, &["queue", "capacity"])? as usize;
    let slack = meta_u64(ck, &["queue", "slack"])? as usize;
    let dim = meta_u64(ck, &["queue", "dim"])? as usize;
    let slots = capacity + slack;
    let ids = ck.i64s("queue.patient_ids", slots)?.iter().map(|&p| p as u64).collect();
    let keys = ck.f32s("queue.keys", &[slots, dim])?.to_vec();
    state.queue = PatientMemoryQueue::from_raw(
        capacity,
        slack,
        dim,
        ids,
        keys,
        meta_u64(ck, &["queue", "head"])? as usize,
        meta_u64(ck, &["queue", "len"])? as usize,
    )
    .map_err(|e| malformed(path, e.to_string()))?;
    state.step = meta_u64(ck, &["step"])?;
    state.epoch = meta_u64(ck, &["epoch"])? as usize;
    Ok((state, config))
}
