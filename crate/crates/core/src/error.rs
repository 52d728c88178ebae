use thiserror::Error;

/// Errors raised by mesh construction, discretization and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("mesh topology error: {0}")]
    Topology(String),

    #[error("degenerate micro-cell in triangle {triangle}: corner Jacobian {jacobian:e}")]
    MeshQuality { triangle: usize, jacobian: f64 },

    #[error("singular Jacobian {jacobian:e} at reference point ({xi}, {eta})")]
    SingularJacobian { jacobian: f64, xi: f64, eta: f64 },

    #[error("degree {degree} exceeds the supported maximum {max}")]
    DegreeTooHigh { degree: usize, max: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unsupported space: {0}")]
    UnsupportedSpace(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("block {block} is not symmetric positive definite")]
    NotPositiveDefinite { block: usize },

    #[error("iteration did not converge after {iterations} iterations (last estimate {estimate:e})")]
    NotConverged { iterations: usize, estimate: f64 },

    #[error("field diverged at step {step}")]
    Diverged { step: usize },

    #[error("problem size {size} exceeds the cap {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("insufficient eigenvalues: {needed} needed, {available} available")]
    InsufficientEigenvalues { needed: usize, available: usize },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
