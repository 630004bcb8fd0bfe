//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A file did not conform to its documented schema.
    #[error("schema error in {context}: {message}")]
    Schema { context: String, message: String },

    /// A record failed a structural invariant.
    #[error("validation error for record '{record}': {message}")]
    Validation { record: String, message: String },

    /// An argument violated a documented precondition.
    #[error("invalid parameter '{name}': {message}")]
    Parameter { name: String, message: String },

    /// Dataset could not be split as requested.
    #[error("split error: {0}")]
    Split(String),

    /// Tensor shapes were incompatible.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Training diverged or could not proceed.
    #[error("training error: {0}")]
    Training(String),

    /// Inference input did not match the trained model.
    #[error("inference error: {0}")]
    Inference(String),

    /// Corpus ingestion failed.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Text embedding failed.
    #[error("embedding error: {0}")]
    Embedding(String),

    /// Chat provider transport failure after retries.
    #[error("transport error: {0}")]
    Transport(String),

    /// Chat provider returned an uninterpretable payload.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Metric is undefined for the given labels (e.g. a single class).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Run configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parameter(name: &str, message: impl Into<String>) -> Self {
        Error::Parameter { name: name.to_string(), message: message.into() }
    }

    pub fn schema(context: &str, message: impl Into<String>) -> Self {
        Error::Schema { context: context.to_string(), message: message.into() }
    }

    pub fn validation(record: &str, message: impl Into<String>) -> Self {
        Error::Validation { record: record.to_string(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
