//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Error {
    #[error("input length {got} does not match weight count {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("truth table for {n} inputs refused (limit {limit})")]
    TruthTableTooLarge { n: usize, limit: usize },

    #[error("threshold select {t} outside supported range 0..={max}")]
    ThresholdOutOfRange { t: i32, max: i32 },

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("register R{reg} written twice in one cycle")]
    DuplicateRegisterWrite { reg: usize },

    #[error("external trace has {got} entries for a {expected}-cycle program")]
    TraceLengthMismatch { expected: usize, got: usize },

    #[error("input count {n} outside supported range {min}..={max}")]
    FaninOutOfRange { n: usize, min: usize, max: usize },

    #[error("operand width {width} exceeds limit {limit}")]
    WidthOverflow { width: usize, limit: usize },

    #[error("schedule needs {needed} live bits, exceeding PE capacity {capacity}")]
    ScheduleInfeasible { needed: usize, capacity: usize },

    #[error("comparison constant {value} not representable in {width} bits")]
    UnrepresentableThreshold { value: i64, width: usize },

    #[error("accumulator would overflow 16 bits: {addends} addends of width {width}")]
    AccumulatorOverflow { addends: usize, width: usize },

    #[error("maxpool window {window} outside supported range 2..={max}")]
    WindowOutOfRange { window: usize, max: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("shape mismatch between {first} and {second}: {msg}")]
    ShapeMismatch {
        first: String,
        second: String,
        msg: String,
    },

    #[error("layer `{layer}` has no {what} loaded (cost-only network description)")]
    MissingParameters { layer: String, what: &'static str },

    #[error("{0}")]
    Config(String),

    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            msg: err.to_string(),
        }
    }
}
