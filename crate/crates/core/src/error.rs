use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dual variable {value} lies outside the conjugate domain of the {family} loss")]
    DomainViolation { family: &'static str, value: f64 },

    #[error("non-finite value while evaluating sample {sample}")]
    Evaluation { sample: usize },

    #[error("Armijo line search failed after {steps} backtracking steps")]
    LineSearch { steps: u32 },

    #[error(
        "semismooth Newton did not reach tolerance {tolerance:e} in {iterations} iterations (residual {residual:e})"
    )]
    NewtonMaxIter {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

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
}
