use thiserror::Error;

/// Errors raised by the numerical kernels, the estimator and the harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("Gram matrix A*A^T is singular or ill-conditioned (condition estimate {cond:e})")]
    SingularGram { cond: f64 },

    #[error("inner matrix (D*A*B + C) is numerically singular")]
    SingularInner,

    #[error("matrix is {rows}x{cols}, expected a square matrix")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("need at least 2 samples to build snapshots, got {0}")]
    TooFewSamples(usize),

    #[error("regressor [Psi(X); U] is rank deficient (Gram condition estimate {cond:e})")]
    RankDeficientRegressor { cond: f64 },

    #[error("covariance lost positive definiteness")]
    CovarianceNotPD,

    #[error("MPC Hessian is ill-conditioned (condition estimate {cond:e})")]
    IllConditionedHessian { cond: f64 },

    #[error("plant state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("unknown plant parameter `{0}`")]
    UnknownParameter(String),

    #[error("invalid parameter value: {0}")]
    InvalidParameter(String),

    #[error("trace is empty")]
    EmptyTrace,

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Numerical breakdowns (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularGram { .. }
                | Error::SingularInner
                | Error::RankDeficientRegressor { .. }
                | Error::CovarianceNotPD
                | Error::IllConditionedHessian { .. }
                | Error::NonFiniteState { .. }
                | Error::NonFinite(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
