use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("root is not bracketed: F({lo}) = {f_lo:e}, F({hi}) = {f_hi:e}")]
    NoBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("operation requires the non-integrable/integrable regime it was designed for: {0}")]
    Regime(String),

    #[error("integral diverges: {0}")]
    Divergent(String),

    #[error("Newton iteration did not converge at t = {t} (dt = {dt:e}, residual {residual:e})")]
    NewtonDiverged { t: f64, dt: f64, residual: f64 },

    #[error("time integration failed at t = {t}: {reason}")]
    StepFailed { t: f64, reason: String },

    #[error("extinction fit rejected: {0}")]
    NotDecaying(String),

    #[error("profile blew up at eta = {eta} (f = {value:e})")]
    Blowup { eta: f64, value: f64 },

    #[error("tail classification does not change sign on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("check not applicable: {0}")]
    NotApplicable(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
