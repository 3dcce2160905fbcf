use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("malformed record {path}: {reason}")]
    MalformedRecord { path: PathBuf, reason: String },
    #[error("shape mismatch in {path}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        path: PathBuf,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("patient {patient_id} appears in splits {first} and {second}")]
    SplitLeak {
        patient_id: u64,
        first: String,
        second: String,
    },
    #[error("trial of length {len} is shorter than the sample length {sample_len}")]
    TrialTooShort { len: usize, sample_len: usize },
    #[error("need at least 3 distinct patients to split, found {0}")]
    TooFewPatients(usize),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingFile(path)
        } else {
            DataError::Io { path, source }
        }
    }
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("temporal neighbouring needs an even sample length, got {0}")]
    OddLength(usize),
    #[error("probability {name}={value} outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum PclError {
    #[error("key row {row} has norm {norm}, expected 1")]
    NormViolation { row: usize, norm: f64 },
    #[error("cannot dequeue {requested} entries from a queue holding {len}")]
    Underflow { requested: usize, len: usize },
    #[error("patient {0} has no positive key in the queue")]
    NoPositive(u64),
    #[error("queue holds {len} entries, capacity {capacity} plus batch {batch} exceeded")]
    Overflow {
        len: usize,
        capacity: usize,
        batch: usize,
    },
    #[error("key dimension {found} does not match queue dimension {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid pcl config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("no samples to evaluate")]
    Empty,
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("only one class present in the labels")]
    DegenerateLabels,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("cannot parse config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("checkpoint is missing array `{0}`")]
    MissingArray(String),
    #[error("array `{name}` has shape {found:?}, expected {expected:?}")]
    ArrayShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pcl(#[from] PclError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("loss became non-finite at epoch {epoch}, step {step}: {loss}")]
    NumericalDivergence { epoch: usize, step: u64, loss: f64 },
    #[error("dataset has no label for record {0}")]
    LabelMissing(String),
    #[error("classifier has {expected} classes but dataset has {found}")]
    ClassCountMismatch { expected: usize, found: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable, machine-readable name of the failure.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Data(e) => match e {
                DataError::MissingFile(_) => "MissingFile",
                DataError::MalformedManifest { .. } => "MalformedManifest",
                DataError::MalformedRecord { .. } => "MalformedRecord",
                DataError::ShapeMismatch { .. } => "ShapeMismatch",
                DataError::SplitLeak { .. } => "SplitLeak",
                DataError::TrialTooShort { .. } => "TrialTooShort",
                DataError::TooFewPatients(_) => "TooFewPatients",
                DataError::EmptyTrainSet => "EmptyTrainSet",
                DataError::InvalidArgument(_) => "InvalidArgument",
                DataError::NonFinite(_) => "NonFinite",
                DataError::Io { .. } => "IoError",
            },
            Error::Augment(AugmentError::OddLength(_)) => "OddLength",
            Error::Augment(AugmentError::BadProbability { .. }) => "BadProbability",
            Error::Model(ModelError::ShapeMismatch { .. }) => "ShapeMismatch",
            Error::Model(ModelError::InvalidConfig(_)) => "InvalidConfig",
            Error::Pcl(e) => match e {
                PclError::NormViolation { .. } => "NormViolation",
                PclError::Underflow { .. } => "Underflow",
                PclError::NoPositive(_) => "NoPositive",
                PclError::Overflow { .. } => "Overflow",
                PclError::DimMismatch { .. } => "ShapeMismatch",
                PclError::InvalidConfig(_) => "InvalidConfig",
            },
            Error::Eval(e) => match e {
                EvalError::LengthMismatch(..) => "LengthMismatch",
                EvalError::Empty => "Empty",
                EvalError::LabelOutOfRange { .. } => "LabelOutOfRange",
                EvalError::DegenerateLabels => "DegenerateLabels",
            },
            Error::Config(e) => match e {
                ConfigError::UnknownKey(_) => "UnknownKey",
                ConfigError::BadValue { .. } => "BadValue",
                ConfigError::Parse { .. } => "ConfigParse",
            },
            Error::Checkpoint(_) => "CheckpointError",
            Error::NumericalDivergence { .. } => "NumericalDivergence",
            Error::LabelMissing(_) => "LabelMissing",
            Error::ClassCountMismatch { .. } => "ClassCountMismatch",
            Error::Io { .. } => "IoError",
        }
    }
}
