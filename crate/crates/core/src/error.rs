use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("manifest {path}: row {row}: {msg}")]
    Manifest { path: PathBuf, row: usize, msg: String },

    #[error("duplicate sample_id `{id}` at row {row}")]
    DuplicateId { id: String, row: usize },

    #[error("row {row}: referenced file does not exist: {path}")]
    DanglingPath { row: usize, path: PathBuf },

    #[error("empty-dataset: {0}")]
    EmptyDataset(String),

    #[error("failed to decode image {path}: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss term `{term}` at step {step}")]
    NonFinite { term: String, step: u64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
