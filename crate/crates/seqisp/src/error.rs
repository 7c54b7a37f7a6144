//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("ppm: {0}")]
    Ppm(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("oracle: {0}")]
    Oracle(String),

    /// A loss or gradient became NaN/Inf; names the offending term.
    #[error("non-finite {term} at iteration {iteration}")]
    NonFinite { term: String, iteration: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
