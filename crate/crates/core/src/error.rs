//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the toolkit.
///
/// `Config`, `Shape` and `Format` are validation errors (bad inputs or
/// malformed files); the rest are runtime failures.
#[derive(Debug, Error)]
pub enum DasError {
    /// Invalid configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor/matrix shape mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed or unsupported file content.
    #[error("format error: {0}")]
    Format(String),

    /// Numeric failure (NaN/Inf or divergence).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training/evaluation protocol failure.
    #[error("train error: {0}")]
    Train(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DasError {
    /// True for errors caused by invalid user input rather than runtime
    /// failure; the CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            DasError::Config(_) | DasError::Shape(_) | DasError::Format(_)
        )
    }
}
