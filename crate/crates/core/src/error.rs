use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("truncated payload: file ends at byte {offset}, header requires {expected}")]
    Truncated { offset: u64, expected: u64 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("checkpoint error for '{name}': {reason}")]
    Checkpoint { name: String, reason: String },

    #[error("palette error: no colour for label {0}")]
    Palette(u16),

    #[error("data error at sample {index}: {reason}")]
    Data { index: usize, reason: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Short machine-friendly tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::Numeric(_) => "numeric",
            Error::Format { .. } => "format",
            Error::Truncated { .. } => "truncated",
            Error::Validation(_) => "validation",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Palette(_) => "palette",
            Error::Data { .. } => "data",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
