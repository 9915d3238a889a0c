use thiserror::Error;

use crate::engine::Violation;

/// A scenario or parameter value that cannot be used.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("action rejected: {0}")]
    Validation(Violation),
    #[error("episode already finished at clock {0}")]
    EpisodeDone(u64),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}
