use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature order must be at least 1")]
    ZeroOrder,

    #[error("correlation {0} outside [-1, 1]")]
    CorrelationOutOfRange(f64),

    #[error("centroid gram matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NonPsdGram(f64),

    #[error("activation `{0}` is not odd; only odd activations are supported")]
    NonOddActivation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite residual in term `{term}`")]
    NonFiniteResidual { term: &'static str },

    #[error("non-finite value in curve at index {0}")]
    NonFiniteCurve(usize),

    #[error("gradient descent diverged at step {step}: |A|_F = {norm:e} exceeds bound {bound:e}; reduce the learning rate (eta_tilde * lambda_max = {stability:.3})")]
    Diverged {
        step: usize,
        norm: f64,
        bound: f64,
        stability: f64,
    },

    #[error("LAPACK routine {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error("spectral solution has no resolved bulk")]
    NoBulk,

    #[error("malformed binary dump: {0}")]
    Dump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
