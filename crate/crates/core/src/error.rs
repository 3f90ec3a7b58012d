use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum MagicError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state is not normalized (norm^2 = {norm_sq:.3e})")]
    NotNormalized { norm_sq: f64 },

    #[error("linear algebra backend failure: {0}")]
    Linalg(String),

    /// Accumulated truncation error exceeded the caller's abort threshold.
    #[error("truncation error {error:.3e} exceeds abort threshold {threshold:.3e}")]
    TruncationAbort { error: f64, threshold: f64 },

    /// A quantity that must be positive came out nonpositive, usually a sign of
    /// excessive truncation.
    #[error("numerical breakdown: {0}")]
    Numerical(String),

    #[error("no convergence after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("inconsistent stabilizer structure: {0}")]
    Inconsistent(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<ndarray_linalg::error::LinalgError> for MagicError {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        MagicError::Linalg(e.to_string())
    }
}

impl From<ndarray::ShapeError> for MagicError {
    fn from(e: ndarray::ShapeError) -> Self {
        MagicError::ShapeMismatch(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MagicError>;
