use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// Config problem anchored to a position in the file.
    #[error("{}:{line}:{column}: {message}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error(transparent)]
    Core(#[from] horizon_core::Error),

    #[error("integrity: {0}")]
    Integrity(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Validation { field: field.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for bad input, 3 for resource limits, 4 for
    /// damaged run directories, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use horizon_core::Error as E;
        match self {
            LabError::Config { .. } | LabError::Validation { .. } => 2,
            LabError::Core(E::InvalidInput(_) | E::DimensionMismatch(..)) => 2,
            LabError::Core(E::ResourceLimit { .. }) => 3,
            LabError::Integrity(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
