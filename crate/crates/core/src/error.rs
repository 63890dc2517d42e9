//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or combination. The message names the
    /// offending key so CLI users can find it in their file.
    #[error("config: {0}")]
    Config(String),

    /// Array shapes that cannot be combined.
    #[error("shape: {0}")]
    Shape(String),

    /// Training produced a non-finite loss; the step counter locates it.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    /// A quantity whose definition does not apply to the given input.
    #[error("undefined: {0}")]
    Undefined(String),

    /// A caller-side contract was violated (bad matrix, wrong domain).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn undefined(msg: impl Into<String>) -> Self {
        Error::Undefined(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
