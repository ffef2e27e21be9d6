//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Arguments outside the documented preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Configurations the model deliberately refuses (embedded eigenvalue, empty kernel).
    #[error("model guard: {0}")]
    ModelGuard(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("eigensolver did not converge after {iterations} iterations (residuals {residuals:?})")]
    NotConverged { iterations: usize, residuals: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, found {found} ({detail})")]
    DimensionMismatch { expected: usize, found: usize, detail: String },

    /// Non-manifold gluing or a degenerate element.
    #[error("mesh construction failed: {0}")]
    Mesh(String),

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
