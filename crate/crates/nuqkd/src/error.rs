//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("bit index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid hex digit {digit:?} at index {index}")]
    InvalidHexDigit { digit: char, index: usize },

    #[error("{what} out of range: {value} (expected {expected})")]
    OutOfRange {
        what: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("requested bit count must be >= 1")]
    EmptyRequest,

    #[error("estimation undefined: empty sifted key")]
    EmptySiftedKey,

    #[error("undefined: {0}")]
    Undefined(&'static str),

    #[error("randomness source error: {0}")]
    Source(String),

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("acquisition requires ~{expected:.3e} pulses, above the cap of {cap:.1e}")]
    PulseCapExceeded { expected: f64, cap: f64 },

    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
