use std::io;
use std::path::PathBuf;

use steertok_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const VERSION: i32 = 4;
    pub const NUMERIC: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{0}")]
    Usage(String),
    #[error("instruction-following gate failed: {0}")]
    Gate(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => exit::USAGE,
            Error::Version { .. } => exit::VERSION,
            Error::Gate(_) => exit::NUMERIC,
            Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } => exit::DATA,
            Error::Core(e) => match e {
                CoreError::FingerprintMismatch(_) => exit::VERSION,
                CoreError::Numeric(_)
                | CoreError::DegenerateVector
                | CoreError::Determinism(_)
                | CoreError::FrozenModelViolation
                | CoreError::FrozenTokenViolation(_) => exit::NUMERIC,
                CoreError::InvalidArgument(_) | CoreError::Unsupported(_) => exit::USAGE,
                CoreError::MissingEmbedding(_)
                | CoreError::Length { .. }
                | CoreError::Generation(_)
                | CoreError::Catalog(_) => exit::DATA,
            },
        }
    }
}
