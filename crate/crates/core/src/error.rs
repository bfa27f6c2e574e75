use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside the allowed range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("problem has {n} qubits; at most {max} are supported here")]
    TooLarge { n: usize, max: usize },

    #[error("gadget construction failed: {0}")]
    Gadget(String),

    #[error("embedding failed: {0}")]
    Embedding(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid waveform: {0}")]
    Waveform(String),

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no sign change of the gap derivative in [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("dynamics: {0}")]
    Dynamics(String),

    #[error("fit: {0}")]
    Fit(String),

    #[error("analysis: {0}")]
    Analysis(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn out_of_range(what: &'static str, value: f64, range: impl Into<String>) -> Self {
        Error::OutOfRange {
            what,
            value,
            range: range.into(),
        }
    }
}
