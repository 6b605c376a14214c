use thiserror::Error;

/// Errors produced across the planning and control stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("joint {joint} ({name}) = {value:.6} rad outside [{lower:.4}, {upper:.4}]")]
    JointLimit {
        joint: usize,
        name: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("euler-rate map singular: pitch {pitch:.6} rad is within {margin} of +-pi/2")]
    Singularity { pitch: f64, margin: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("object unreachable: constraint family {family} cannot be met ({detail})")]
    Unreachable {
        family: &'static str,
        detail: String,
    },
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("callback returned a non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integration fault at t = {time:.4} s: {reason}")]
    Integration { time: f64, reason: String },
    #[error("io error: {0}")]
    Io(String),
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
