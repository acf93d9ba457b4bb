use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the core library.
#[derive(Debug, Error)]
pub enum ImiError {
    #[error("addressing error: {0}")]
    Addressing(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset too small: need at least {required} images, have {available}")]
    DatasetTooSmall { required: usize, available: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("backend does not support gradients: {0}")]
    NotDifferentiable(String),

    #[error("optimization diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("visualization weaker than natural data: {0}")]
    WeakerThanData(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("participant {0} was already admitted to this task")]
    RepeatParticipant(String),

    #[error("recruitment for {0} is complete")]
    RecruitmentClosed(String),

    #[error("no capacity: {0}")]
    NoCapacity(String),

    #[error("session state error: {0}")]
    State(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ImiError> = std::result::Result<T, E>;

impl ImiError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ImiError::Io {
            path: path.into(),
            source,
        }
    }
}
