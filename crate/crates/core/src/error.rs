use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("column `{column}` has zero variance")]
    DegenerateColumn { column: String },

    #[error("collinear columns in {context}: {columns:?}")]
    Collinear { context: String, columns: Vec<usize> },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance block for group {group} is not positive definite")]
    NotPositiveDefinite { group: String },

    #[error("design covariance is ill-conditioned: shrinkage {shrinkage:.3e} exceeds the allowed maximum")]
    Conditioning { shrinkage: f64 },

    #[error("group {0} has no knockoff counterpart")]
    UnpairedGroup(String),
}

pub type Result<T> = std::result::Result<T, Error>;
