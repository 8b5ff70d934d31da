use thiserror::Error;

/// Errors surfaced by the library. Invalid user input is reported here rather
/// than through panics.
#[derive(Debug, Error)]
pub enum SfaError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("rank-deficient design matrix")]
    RankDeficient,
    #[error("quadrature did not converge: estimated error {error:e} after {evaluations} evaluations")]
    Quadrature { error: f64, evaluations: usize },
    #[error("non-finite function value at x = {0}")]
    NonFinite(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SfaError>;
