use std::io;
use std::path::{Path, PathBuf};

use fieldreg::Error;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Error,
    },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Prefixes a library error with what was being done, keeping its exit code.
    pub fn context(context: impl Into<String>) -> impl FnOnce(Error) -> CliError {
        let context = context.into();
        move |source| CliError::Context { context, source }
    }

    /// 2 config, 3 numerical, 4 I/O or format.
    pub fn exit_code(&self) -> i32 {
        let core = match self {
            CliError::Config(_) => return 2,
            CliError::Io { .. } => return 4,
            CliError::Context { source, .. } | CliError::Core(source) => source.root(),
        };
        match core {
            Error::InvalidArgument(_) | Error::Mismatch { .. } | Error::InsufficientSamples { .. } => 2,
            Error::NotPositiveDefinite { .. }
            | Error::NumericalFailure { .. }
            | Error::DegenerateData(_)
            | Error::InvalidState(_) => 3,
            Error::Format(_) | Error::Io(_) => 4,
            Error::Sample { .. } => unreachable!("root() strips sample wrappers"),
        }
    }
}
