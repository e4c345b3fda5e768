use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    /// Input data failed a range or shape check.
    #[error("validation error: {0}")]
    Validation(String),

    /// An operation was called outside its pre-condition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Exhaustive enumeration refused because the search space is too large.
    #[error("search space of {size} sequences exceeds the oracle guard of {limit}")]
    OracleGuard { size: u128, limit: u128 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PlanError>;

pub(crate) fn validation(msg: impl Into<String>) -> PlanError {
    PlanError::Validation(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> PlanError {
    PlanError::Contract(msg.into())
}
