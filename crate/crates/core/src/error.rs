use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule config: {0}")]
    InvalidConfig(String),

    /// A (beta, m) pair that yields a non-positive variance somewhere in the chain.
    #[error("inadmissible schedule: {quantity} = {value:e} at step {step}")]
    InadmissibleSchedule {
        quantity: &'static str,
        step: usize,
        value: f64,
    },

    #[error("step {step} out of range [{min}, {max}]")]
    StepOutOfRange { step: usize, min: usize, max: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("inference variance {gamma} gives alpha_bar {alpha_bar:e} outside training range [{min:e}, 1]")]
    GammaOutOfRange { gamma: f64, alpha_bar: f64, min: f64 },

    #[error("invalid inference schedule: {0}")]
    InvalidGamma(String),

    #[error("predictor: {0}")]
    Predictor(String),

    #[error("non-finite value in reverse chain at step {step}")]
    NonFinite { step: usize },

    #[error("wav {path}: {message} (at byte offset {offset})")]
    Wav {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("metric: {0}")]
    Metric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
