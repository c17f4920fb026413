use thiserror::Error;

#[derive(Debug, Error)]
pub enum FblError {
    #[error("invalid class counts: {0}")]
    InvalidCounts(String),

    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("schedule step t={t} outside 1..={total}")]
    ScheduleRange { t: usize, total: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("run length mismatch: {0} vs {1} epochs")]
    RunLengthMismatch(usize, usize),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FblError>;

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> FblError {
    FblError::ShapeMismatch {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
