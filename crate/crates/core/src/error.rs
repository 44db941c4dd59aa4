use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Model training could not proceed.
    #[error("training failed: {0}")]
    Training(String),
    /// An argument outside the documented domain of an operation.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A classifier fit could not proceed.
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file error: {0}")]
    ModelCodec(#[from] bincode::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
