use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solvers, operators and experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hypermodel: {0}")]
    InvalidModel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what} did not converge within {iters} iterations")]
    NonConvergence { what: &'static str, iters: usize },

    #[error("ODE integration failed at z = {z}: step size underflow")]
    IntegrationFailure { z: f64 },

    #[error("column {0} of the forward map has zero norm")]
    ZeroColumn(usize),

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("operator is rank deficient: {0}")]
    RankDeficient(String),

    #[error("grid has no free nodes")]
    DegenerateGrid,

    #[error("noiseless signal vanishes identically; cannot scale noise")]
    DegenerateSignal,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dim(message: impl Into<String>) -> Self {
        Error::Dimension(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
