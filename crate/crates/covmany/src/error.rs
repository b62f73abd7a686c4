//! Crate-wide error type.

/// Errors reported by the statistical routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric: relative asymmetry {0:.3e} exceeds 1e-12")]
    NotSymmetric(f64),

    #[error("matrix is not positive semi-definite: min eigenvalue {min_eig:.6e} below -{tol:.6e}")]
    NotPsd { min_eig: f64, tol: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
