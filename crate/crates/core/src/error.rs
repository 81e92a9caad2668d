use thiserror::Error;

/// Errors raised by the toolkit.
///
/// The variants map onto the CLI exit codes: configuration problems exit
/// with 2, numerical failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("H = {hurst} is outside the CLT regime ({lower}, {upper}) for d = {dim}")]
    Regime {
        hurst: f64,
        dim: usize,
        lower: f64,
        upper: f64,
    },

    #[error("covariance matrix is not positive definite at index {index}")]
    Factorization { index: usize },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("membership failure: {0}")]
    Membership(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("planning error: {0}")]
    Planning(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Planning(_) | Error::Domain(_) | Error::Regime { .. } => 2,
            Error::Json(_) | Error::Membership(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
