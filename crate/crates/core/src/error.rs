use std::path::PathBuf;

/// Errors raised anywhere in the core crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backward: {0}")]
    Autograd(String),

    #[error("gradient check: {0}")]
    GradCheck(String),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("data: {path}: {reason}")]
    Data { path: PathBuf, reason: String },

    #[error("numerical abort at epoch {epoch}, batch {batch}: loss {loss}")]
    NumericalAbort {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (expected MIXSSM01)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("truncated file: need {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("tensor {name}: shape {shape:?} holds {expected} values but {actual} bytes are declared")]
    ShapeLength {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that stem from numerics rather than inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NumericalAbort { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
