use std::path::PathBuf;

use capplan_core::PlanError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: PlanError },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
    #[error("training dataset is empty: {0}")]
    EmptyDataset(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn usage(msg: impl Into<String>) -> HarnessError {
    HarnessError::Usage(msg.into())
}
