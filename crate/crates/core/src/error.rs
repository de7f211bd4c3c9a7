use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong while building, simulating or optimizing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: right endpoint {b} must exceed left endpoint {a}")]
    InvalidDomain { a: f64, b: f64 },

    #[error("grid too coarse: {cells} subintervals, need at least {min}")]
    TooCoarse { cells: usize, min: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("noise truncation {modes} exceeds the {max} modes the grid can represent")]
    TruncationTooLarge { modes: usize, max: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite state at step {step} (node {node})")]
    NonFiniteState { step: usize, node: usize },

    #[error("actuator Gram matrix is not positive definite (jitter tried up to {max_jitter:e})")]
    DegenerateActuators { max_jitter: f64 },

    #[error("every rollout in the batch failed")]
    AllRolloutsFailed,

    #[error("insufficient samples: got {got}, need at least {min}")]
    InsufficientSamples { got: usize, min: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("malformed csv {path}: {reason}")]
    Csv { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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

    /// Process exit code: 1 usage/config, 2 numerical failure.
    /// Statistical-contract failures are not errors and map to 3 at the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteState { .. }
            | Error::DegenerateActuators { .. }
            | Error::AllRolloutsFailed => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
