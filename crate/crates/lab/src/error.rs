use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}:{line}: {message}")]
    Parse { origin: String, line: usize, message: String },
    #[error("{origin}: schema error: {message}")]
    Schema { origin: String, message: String },
    #[error("{origin}:{line}: dimension error: {message}")]
    Dim { origin: String, line: usize, message: String },
    #[error("{origin}:{line}: range error: {message}")]
    Range { origin: String, line: usize, message: String },
    #[error("{origin}:{line}: label error: {message}")]
    Label { origin: String, line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A check ran to completion and did not pass.
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] dleaf_core::Error),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for rejected input or failed checks, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Io { .. } => 1,
            LabError::Core(dleaf_core::Error::Numerics(_)) => 1,
            _ => 2,
        }
    }
}

pub type LabResult<T> = Result<T, LabError>;
