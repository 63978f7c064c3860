use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("manifest {path}: record {record}: {reason}")]
    Manifest {
        path: PathBuf,
        record: String,
        reason: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    /// The request may succeed if issued again (endpoint unavailable, timeout).
    #[error("retriable generation failure for request {key}: {reason}")]
    Retriable { key: String, reason: String },

    #[error("generation: {0}")]
    Generation(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("training: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failure class used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Generation,
    Training,
}

impl ErrorClass {
    /// Process exit status for a failure of this class.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Generation => 4,
            ErrorClass::Training => 5,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn manifest(path: impl Into<PathBuf>, record: impl ToString, reason: impl ToString) -> Self {
        Error::Manifest {
            path: path.into(),
            record: record.to_string(),
            reason: reason.to_string(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Parameter(_) => ErrorClass::Config,
            Error::Manifest { .. } | Error::Data(_) | Error::Shape(_) | Error::Io { .. } => {
                ErrorClass::Data
            }
            Error::Retriable { .. } | Error::Generation(_) => ErrorClass::Generation,
            Error::Diverged(_) | Error::Training(_) => ErrorClass::Training,
        }
    }

    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Retriable { .. })
    }
}
