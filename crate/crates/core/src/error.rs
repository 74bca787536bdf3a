use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point is behind the camera (camera-frame z = {z})")]
    BehindCamera { z: f64 },

    #[error("{name} = {value} deg is outside the augmentation range [-{limit}, {limit}] (use force to bypass)")]
    AngleOutOfRange {
        name: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("degenerate batch: no valid pixels left after masking")]
    DegenerateBatch,

    #[error("degenerate evaluation: empty pixel mask")]
    DegenerateEvaluation,

    #[error("optimization diverged at step {step} (loss is not finite)")]
    OptimizationFailure { step: usize, history: Vec<f64> },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateBatch
                | Error::DegenerateEvaluation
                | Error::OptimizationFailure { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
