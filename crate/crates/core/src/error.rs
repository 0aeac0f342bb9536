use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the verification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("layer {layer}: {message}")]
    DimensionMismatch { layer: usize, message: String },

    #[error("unknown activation `{0}` (expected `relu` or `linear`)")]
    UnknownActivation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },

    #[error("non-finite input at coordinate {0}")]
    NonFinite(usize),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("degenerate box (zero width on axis {axis})")]
    DegenerateBox { axis: usize },

    #[error("empty box set")]
    EmptyBoxSet,

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("oracle intractable: {0}")]
    Intractable(String),

    #[error("arithmetic overflow computing {0}")]
    Overflow(&'static str),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
