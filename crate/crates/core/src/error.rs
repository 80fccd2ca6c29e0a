use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported or malformed WAV file {path}: {reason}")]
    Wav { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("missing artifact {path}; run stage `{stage}` first")]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error("artifact {path} was produced with a different configuration (hash {found}, expected {expected})")]
    ConfigMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("corrupt model file {path}: {reason}")]
    CorruptModel { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::ConfigMismatch { .. } => {
                ErrorClass::Config
            }
            Error::Numeric(_) => ErrorClass::Numeric,
            Error::Io { .. }
            | Error::Wav { .. }
            | Error::Manifest { .. }
            | Error::Data(_)
            | Error::MissingStage { .. }
            | Error::CorruptModel { .. } => ErrorClass::Data,
        }
    }
}
