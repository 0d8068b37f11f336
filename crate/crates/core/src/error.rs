//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix shapes do not line up.
    #[error("dimension error: {0}")]
    Dim(String),

    /// A value is outside its legal domain (non-finite, not a label, ...).
    #[error("value error: {0}")]
    Value(String),

    /// An object is in a state that forbids the operation (joint out of
    /// limits, empty store, ...).
    #[error("state error: {0}")]
    State(String),

    /// Input data violates a structural contract (missing link assignment,
    /// non-convex weights, mismatched identity indices, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A configuration value is unusable (non-positive dimension, camera
    /// inside the object, unknown field, ...).
    #[error("config error: {0}")]
    Config(String),

    /// A file does not match its declared on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// Training diverged or produced a non-finite quantity.
    #[error("training error: {0}")]
    Training(String),

    /// A storage budget cannot be satisfied.
    #[error("budget error: {0}")]
    Budget(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub fn value(msg: impl Into<String>) -> Self {
        Error::Value(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }
    pub fn budget(msg: impl Into<String>) -> Self {
        Error::Budget(msg.into())
    }
}
