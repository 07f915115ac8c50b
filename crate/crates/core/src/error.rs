use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("invalid natural parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate moments: {0}")]
    DegenerateMoments(String),

    #[error("rejection budget exceeded after {attempts} proposals (survival set mass is too small for the current parameters)")]
    RejectionBudgetExceeded { attempts: usize },

    #[error("projection did not converge after {sweeps} sweeps")]
    ProjectionFailure { sweeps: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("family mismatch: {0}")]
    FamilyMismatch(String),

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("feature count {count} exceeds cap {cap}")]
    FeatureCapExceeded { count: usize, cap: usize },

    #[error("solver did not converge: {0}")]
    SolverNonConvergence(String),

    #[error("too much data outside the survival set: dropped fraction {0:.3}")]
    ExcessiveDrop(f64),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
