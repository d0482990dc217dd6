use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("prior has no mass on [0, {h}]")]
    ZeroMassBelowCutoff { h: f64 },

    #[error("mixture pmf underflows at x = {x}")]
    UnsupportedPoint { x: u64 },

    #[error("sample is empty")]
    EmptySample,

    #[error("invalid clipping bounds [{a}, {b}]")]
    InvalidBounds { a: f64, b: f64 },

    #[error("q has no mass where p does at x = {x}")]
    SupportMismatch { x: usize },

    #[error("objective is not finite at the initial point")]
    NoProgress,

    #[error("function is not finite at theta = {theta}")]
    NonFiniteFunction { theta: f64 },

    #[error("polynomial degree {0} exceeds the supported maximum of 30")]
    DegreeTooLarge(usize),

    #[error("rate diagnostic needs at least 4 distinct sample sizes with positive regret, got {0}")]
    InsufficientPoints(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
