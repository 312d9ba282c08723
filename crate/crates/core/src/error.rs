use thiserror::Error;

/// Errors raised by the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: need {needed} samples per channel, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("degenerate spectrum: channel {channel} has no spectral energy")]
    DegenerateSpectrum { channel: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("degenerate fit: all samples identical")]
    DegenerateFit,

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
