use std::path::PathBuf;

use diffcore::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MmrecError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("modality `{name}`: manifest declares dim {declared}, file has {found}")]
    DimMismatch {
        name: String,
        declared: usize,
        found: usize,
    },
    #[error("unknown {entity} id `{id}` in {path}")]
    UnknownId {
        entity: &'static str,
        id: String,
        path: PathBuf,
    },
    #[error("duplicate {entity} id `{id}`")]
    DuplicateId { entity: &'static str, id: String },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MmrecError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MmrecError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        MmrecError::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Errors caused by bad inputs or configuration rather than by a failing
    /// computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            MmrecError::NonFiniteLoss { .. } | MmrecError::Diff(_) | MmrecError::Io { .. }
        )
    }
}

pub type Result<T, E = MmrecError> = std::result::Result<T, E>;
