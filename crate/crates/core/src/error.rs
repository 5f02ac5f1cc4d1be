use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box [{x1}, {y1}, {x2}, {y2}]: corners must satisfy x2 > x1 and y2 > y1")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("index {index} out of range for {len} heads")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("box lies entirely outside the {width}x{height} frame")]
    BoxOutsideFrame { width: u32, height: u32 },

    #[error("pair rejected: {0}")]
    Rejected(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("average precision is undefined: no positive ground truth")]
    NoPositives,

    #[error("checkpoint config digest mismatch: checkpoint has {found}, config has {expected}")]
    DigestMismatch { expected: String, found: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
