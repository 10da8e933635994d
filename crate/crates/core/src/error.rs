use thiserror::Error;

use crate::median::MedianFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("curves live on different time grids")]
    GridMismatch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The solver ran out of iterations; the last iterate is kept in the fit.
    #[error("median solver did not converge after {} iterations (residual {:.3e})", .0.iterations, .0.residual_norm)]
    NotConverged(Box<MedianFit>),

    #[error("design error: {0}")]
    Design(String),

    #[error("jacobian operator is singular (condition estimate {condition:.3e})")]
    SingularGamma { condition: f64 },

    #[error("poststratum {group} has no sampled unit; aggregate small groups before estimating")]
    EmptyGroup { group: usize },

    #[error("variance: {0}")]
    Variance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn design(msg: impl Into<String>) -> Self {
        Error::Design(msg.into())
    }
}
