use thiserror::Error;

/// Error type shared across the whole crate.
#[derive(Debug, Error)]
pub enum LutError {
    /// Dimension mismatch; the message names the offending shapes.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Bad or inconsistent configuration (unknown key, invalid value, missing file).
    #[error("configuration error: {0}")]
    Config(String),

    /// Checkpoint was written under a different model configuration.
    #[error("checkpoint/config hash mismatch: checkpoint has {found:#018x}, config requires {expected:#018x}")]
    CheckpointMismatch { expected: u64, found: u64 },

    /// Corrupt or truncated file contents.
    #[error("corrupt {kind} file: {detail}")]
    Corrupt { kind: &'static str, detail: String },

    /// A computation received or produced non-finite values where finite ones are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// No monotonic alignment exists: the target needs more frames than the input has.
    #[error("ctc alignment infeasible: {frames} frames but target requires at least {required}")]
    CtcInfeasible { frames: usize, required: usize },

    /// An operation that needs at least one element got none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A statistic is undefined on the given data (e.g. correlation of a constant series).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LutError>;

impl LutError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        LutError::Shape { op, detail: detail.into() }
    }
}
