use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error for patient {patient_id}: {field}: {message}")]
    Validation {
        patient_id: String,
        field: String,
        message: String,
    },

    #[error("empty patient_id (line {line})")]
    EmptyPatientId { line: usize },

    #[error("duplicate patient_id {0}")]
    DuplicatePatient(String),

    #[error("unknown {modality} code {code:?}")]
    UnknownCode { code: String, modality: String },

    #[error("{modality} code {code:?} has no category in the category map")]
    MissingCategory { code: String, modality: String },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("empty pooling input")]
    EmptyPooling,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: String,
        index: usize,
        size: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("patient has no visits")]
    NoVisits,

    #[error("infeasible cohort spec {spec}: {message}")]
    InfeasibleSpec { spec: String, message: String },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss {
        step: usize,
        last_good: Box<crate::train::ModelState>,
    },

    #[error("truncated checkpoint")]
    TruncatedCheckpoint,

    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("vocabulary fingerprint mismatch: checkpoint {checkpoint}, data {data}")]
    FingerprintMismatch { checkpoint: String, data: String },

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("zero within-cluster dispersion")]
    ZeroDispersion,

    #[error("coincident centroids")]
    CoincidentCentroids,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
