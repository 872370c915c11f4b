use thiserror::Error;

/// Errors raised by the identification library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid index pattern: {0}")]
    InvalidPattern(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, tolerance {tolerance:e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("singular pivot {value:e} at diagonal position {index}")]
    SingularPivot { index: usize, value: f64 },

    /// A definiteness precondition failed; `block` names the offending matrix.
    #[error("{block} is not positive definite")]
    NotPositiveDefinite { block: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value at sample {k}: {what}")]
    NonFinite { k: usize, what: String },

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("rank-deficient regression (condition number {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("infeasible initial point: {0}")]
    Infeasible(String),

    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
