//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Arguments outside their documented domain (bad lengths, ranges, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Inputs that are formally valid but carry no usable signal
    /// (all-equal losses, zero-range normalization, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A class does not have enough samples for a per-class fit.
    #[error("degenerate class {class}: {count} sample(s), need at least 2")]
    DegenerateClass { class: usize, count: usize },

    /// Per-sample epochs must be recorded strictly in order.
    #[error("ordering error: {0}")]
    Ordering(String),

    /// Sample id outside the store.
    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    /// An operation needs more recorded epochs than are available.
    #[error("insufficient history: need {needed} recorded epochs, have {got}")]
    InsufficientHistory { needed: usize, got: usize },

    /// NaN or other numeric breakdown, with context for the failing step.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Binary log format violations, reported with the byte offset.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// CSV/text parse failures, reported with the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
