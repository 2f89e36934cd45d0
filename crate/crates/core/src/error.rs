use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid sparse pattern {n}:{m} (need 1 <= n < m)")]
    InvalidPattern { n: usize, m: usize },

    #[error("degenerate threshold query: keep {keep} of {len} elements")]
    DegenerateLength { keep: usize, len: usize },

    #[error("invalid importance parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("N:M pattern violated: block {block} has {nonzeros} nonzeros (limit {n})")]
    PatternViolation { block: usize, nonzeros: usize, n: usize },

    #[error("invalid schedule: start epoch {start} must be < end epoch {end}")]
    InvalidSchedule { start: u32, end: u32 },

    #[error("training diverged at epoch {epoch}, iteration {iteration}: loss = {loss}")]
    Divergence { epoch: u32, iteration: u64, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
