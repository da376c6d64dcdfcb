use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid operand: {0}")]
    InvalidOperand(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("cannot ingest {path}: {reason}")]
    IngestPath { path: PathBuf, reason: String },
    #[error("bad dataset manifest line {line}: {reason}")]
    IngestLine { line: usize, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("computation cost is zero")]
    DivisionByZero,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors a kernel raises when an operand leaves its numeric
    /// format. The evaluator records these as saturated images.
    pub fn is_overflow(&self) -> bool {
        matches!(self, Error::Overflow(_))
    }
}
