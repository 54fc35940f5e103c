use thiserror::Error;

/// Errors raised across the library. The CLI maps each variant onto an exit code.
#[derive(Debug, Error)]
pub enum PacerError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training error in `{name}`: {detail}")]
    Training { name: String, detail: String },

    #[error("replay buffer not ready: holds {have} transitions, batch needs {need}")]
    NotReady { have: usize, need: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PacerError>;

impl PacerError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        PacerError::Config(msg.into())
    }

    pub(crate) fn training(name: impl Into<String>, detail: impl Into<String>) -> Self {
        PacerError::Training {
            name: name.into(),
            detail: detail.into(),
        }
    }
}
