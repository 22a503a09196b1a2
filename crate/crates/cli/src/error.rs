use std::path::{Path, PathBuf};

use mmrec::MmrecError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] MmrecError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for bad inputs or configuration, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        let validation = match self {
            CliError::Usage(_) | CliError::Json(_) => true,
            CliError::Core(e) => e.is_validation(),
            CliError::Io { .. } | CliError::Csv(_) => false,
        };
        if validation {
            1
        } else {
            2
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
