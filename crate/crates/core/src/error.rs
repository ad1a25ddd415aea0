use thiserror::Error;

/// Errors raised by the estimators and their supporting routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (smallest eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),

    #[error("eigen decomposition did not converge")]
    EigenFailure,

    #[error("degenerate scale: median squared distance is zero")]
    DegenerateScale,

    #[error("data do not span the full space (rank {rank} < {dim})")]
    RankDeficient { rank: usize, dim: usize },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last step {step:.3e})")]
    NotConverged { iterations: usize, step: f64 },

    #[error("existence condition fails: {count} of {n} points lie in a {dim}-dimensional subspace (beta = {beta})")]
    ConditionA {
        beta: f64,
        dim: usize,
        count: usize,
        n: usize,
    },

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("no usable observations: {0}")]
    Empty(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
