//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or unknown configuration key.
    #[error("config error: {0}")]
    Config(String),

    /// Task generation could not satisfy its request.
    #[error("task generation error: {0}")]
    Task(String),

    /// Invalid argument to an analysis or evaluation routine.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Training aborted on a non-finite loss. Carries a JSON dump of the
    /// offending rollout group for post-mortem.
    #[error("non-finite loss at step {step}: {message}")]
    NonFinite {
        step: u64,
        message: String,
        dump: String,
    },

    #[error("group too small: need at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
