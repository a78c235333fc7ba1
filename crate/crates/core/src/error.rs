use thiserror::Error;

use crate::solvers::ConvergenceTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid weight {0}: must be finite and nonnegative")]
    InvalidWeight(f64),

    #[error("invalid penalty {0}: must be positive")]
    InvalidPenalty(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid image size {0}")]
    InvalidSize(usize),

    #[error("problem too large for dense analysis: {cols} columns (limit {limit})")]
    SizeLimit { cols: usize, limit: usize },

    /// The iterate blew up. Carries the samples recorded before the blow-up.
    #[error("solver diverged at epoch {epoch}")]
    Divergence {
        epoch: f64,
        trace: Box<ConvergenceTrace>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
