use thiserror::Error;

/// Errors shared across the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    /// A pivot (or pivot block) was not positive definite during factorization.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// Block size does not divide the matrix dimension.
    #[error("block size {g} does not divide dimension {n}")]
    BadBlockSize { g: usize, n: usize },

    /// An iterative solver exhausted its budget.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Operand shapes are inconsistent.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation received an (effectively) zero matrix where a nonzero one is required.
    #[error("zero matrix: {0}")]
    ZeroMatrix(String),

    /// Input exceeds the dense-computation size cap.
    #[error("problem too large: {0}")]
    TooLarge(String),

    /// A data-driven estimator was given no data.
    #[error("empty data: {0}")]
    EmptyData(String),

    /// Dimension must be a power of two.
    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),

    /// Serialization / container format problem.
    #[error("container format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
