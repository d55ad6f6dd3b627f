use std::fmt;

use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported dimension: expected {expected}, got {got}")]
    UnsupportedDimension { expected: usize, got: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("problem too large for exact solver: {size} atoms (limit {limit})")]
    Capacity { size: usize, limit: usize },

    #[error("no convergence after {iterations} iterations: {message}")]
    Convergence {
        message: String,
        iterations: usize,
        residual_history: Vec<f64>,
    },

    #[error("degenerate evidence: all posterior weights vanish")]
    DegenerateEvidence,

    #[error("surrogate training residual {residual:.3e} exceeds {limit:.1e}")]
    SurrogateQuality { residual: f64, limit: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(msg: impl fmt::Display) -> Self {
        Error::Argument(msg.to_string())
    }

    pub(crate) fn numeric(msg: impl fmt::Display) -> Self {
        Error::Numeric(msg.to_string())
    }
}
