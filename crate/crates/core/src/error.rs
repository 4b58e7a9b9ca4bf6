use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported constellation order {0} (expected 4 or 16)")]
    UnsupportedOrder(usize),
    #[error("AMP diverged at iteration {iteration}: non-finite state")]
    Diverged { iteration: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("instance too large for exhaustive search: MN = {0} (limit 10)")]
    TooLarge(usize),
    #[error("missing parameters for detector {0}")]
    MissingParams(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
