use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every stage of the toolkit.
#[derive(Debug, Error)]
pub enum ScdError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: u32, num_classes: usize },

    #[error("non-finite values in {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("captioner unavailable: {0}")]
    CaptionerUnavailable(String),

    #[error("image encoder unavailable: {0}")]
    EncoderUnavailable(String),

    #[error("segmenter unavailable: {0}")]
    SegmenterUnavailable(String),

    #[error("tracker unavailable: {0}")]
    TrackerUnavailable(String),

    #[error("dense matcher unavailable: {0}")]
    MatcherUnavailable(String),

    #[error("retriever unavailable: {0}")]
    RetrieverUnavailable(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json ({context}): {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("image codec ({path}): {message}")]
    Image { path: PathBuf, message: String },

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ScdError>;

impl ScdError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ScdError::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        ScdError::Json {
            context: context.into(),
            source,
        }
    }

    /// True for the adapter-availability family; the pipeline treats these as
    /// recoverable per pair.
    pub fn is_adapter_failure(&self) -> bool {
        matches!(
            self,
            ScdError::CaptionerUnavailable(_)
                | ScdError::EncoderUnavailable(_)
                | ScdError::SegmenterUnavailable(_)
                | ScdError::TrackerUnavailable(_)
                | ScdError::MatcherUnavailable(_)
                | ScdError::RetrieverUnavailable(_)
        )
    }
}
