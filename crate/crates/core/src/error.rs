//! Error type shared by the whole crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("plan built for a different (matrix, trajectory) pair: {0}")]
    PlanMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("conjugate gradient breakdown: p'Ap = {0} is not positive")]
    CgBreakdown(f64),

    #[error("interpolation coefficient fit is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("coefficient fit residual {residual:.3e} exceeds threshold {threshold:.3e}")]
    FitResidual { residual: f64, threshold: f64 },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to
    /// (2 usage, 3 data, 4 numerical failure).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::MissingInput(_) | Error::Config(_) => 2,
            Error::DimensionMismatch(_)
            | Error::PlanMismatch(_)
            | Error::Data(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_) => 3,
            Error::NonFinite(_)
            | Error::CgBreakdown(_)
            | Error::IllConditioned(_)
            | Error::FitResidual { .. } => 4,
        }
    }
}
