use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("singular matrix: pivot {pivot} has magnitude {magnitude:e}")]
    SingularMatrix { pivot: usize, magnitude: f64 },

    #[error("non-finite residual: {0}")]
    NonFiniteResidual(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("Newton corrector failed at t = {t} after {iterations} iterations (residual {residual:e})")]
    NewtonNoConvergence { t: f64, iterations: usize, residual: f64 },

    #[error("inadmissible transition for {device}: {value} outside [{min}, {max}]")]
    InadmissibleTransition { device: String, value: f64, min: f64, max: f64 },

    #[error("power flow did not converge: {0}")]
    PowerFlowNoConvergence(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
