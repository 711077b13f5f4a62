//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DonnError>;

#[derive(Debug, Error)]
pub enum DonnError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid propagation distance z = {0} (must be > 0)")]
    InvalidDistance(f64),

    #[error("lookup table error: {0}")]
    Lut(String),

    #[error("image encoding error: {0}")]
    Encoding(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("IDX parse error: {0}")]
    Idx(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("model is not trained")]
    Untrained,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(String),
}

impl From<csv::Error> for DonnError {
    fn from(e: csv::Error) -> Self {
        DonnError::Csv(e.to_string())
    }
}
