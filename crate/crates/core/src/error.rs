use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {0}; linear messages overflowed, retry with log-domain messages")]
    Overflow(&'static str),

    #[error("initial constraint infeasible for population {population}: the backward message vanishes where the initial density is positive")]
    Infeasible { population: usize },

    #[error("plan is not normalized (mass {mass}); the entropy formula needs a probability plan")]
    Unnormalized { mass: f64 },

    #[error("missing marginal for population {population} at time index {step}")]
    MissingMarginal { population: usize, step: usize },

    #[error("dense oracle refused: {entries} tensor entries exceed the guard of {limit}")]
    OracleTooLarge { entries: u128, limit: u128 },

    #[error("oracle did not converge within {0} iterations")]
    OracleNoConvergence(usize),

    #[error("Hopf-Cole transform underflowed to zero at time index {step}; use log-domain messages")]
    HopfColeUnderflow { step: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Artifact(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
