use thiserror::Error;

/// Errors raised by the engine, pruning, and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {what} (layer {layer}, index {index})")]
    NonFinite {
        what: &'static str,
        layer: usize,
        index: usize,
    },

    #[error("network has no unmasked weights left to prune")]
    EmptyNetwork,

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
