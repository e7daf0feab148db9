use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid system: {0}")]
    Invalid(String),

    #[error("system is not well-posed: I - A_SS*Phi is numerically singular (sigma_min/sigma_max = {ratio:.3e})")]
    NotWellPosed { ratio: f64 },

    #[error("resolvent singular at lambda = {0}")]
    ResolventSingular(Complex64),

    #[error("least-squares resolvent at lambda = {lambda} leaves residual {residual:.3e} > {tol:.3e}")]
    InconsistentResolvent {
        lambda: Complex64,
        residual: f64,
        tol: f64,
    },

    #[error("subsystem {index}: empty null space at claimed zero {lambda} (tolerance mismatch)")]
    EmptyNullSpace { index: usize, lambda: Complex64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("numerically singular matrix in {0}")]
    Singular(&'static str),

    #[error("model file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
