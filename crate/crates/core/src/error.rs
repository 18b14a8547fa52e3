use std::io;

use thiserror::Error;

/// Failure modes of the binary containers (FRDS datasets, FRM1 checkpoints).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),
    #[error("malformed header: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("numerical failure: {message} (residual {residual:e})")]
    NumericalFailure { message: String, residual: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("network mismatch at layer {layer}: {detail}")]
    Mismatch { layer: usize, detail: String },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>, residual: f64) -> Self {
        Error::NumericalFailure {
            message: msg.into(),
            residual,
        }
    }

    pub(crate) fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }

    /// The innermost error, with sample wrappers stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Sample { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
