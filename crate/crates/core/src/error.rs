use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fields live on different domains")]
    DomainMismatch,

    #[error("time {t} lies outside the noise window [{t_min}, {t_max}]")]
    OutOfWindow { t: f64, t_min: f64, t_max: f64 },

    #[error("negative derivative {value:e} of the nonlinearity at s = {s}")]
    NegativeDerivative { s: f64, value: f64 },

    #[error("nonlinearity `{0}` has no derivative data")]
    MissingDerivative(String),

    #[error("nonlinear solve did not converge after {iters} iterations (residual {residual:e})")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("non-finite field values at t = {t}")]
    Overflow { t: f64 },

    #[error("certification required: {0}")]
    Uncertified(String),

    #[error("noise smoothness mismatch: {0}")]
    SmoothnessMismatch(String),

    #[error("constants cannot be derived: {0}")]
    UnderivedConstants(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
