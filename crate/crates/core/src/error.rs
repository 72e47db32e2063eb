use thiserror::Error;

/// Errors raised across simulation, valuation and verification.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("estimation failed: all {n_paths} paths diverged")]
    EstimationFailed { n_paths: usize },

    #[error("{what} too large: {size} exceeds cap {cap}")]
    TooLarge { what: &'static str, size: f64, cap: usize },

    #[error("nested budget exceeded: {needed} inner paths requested, budget {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
