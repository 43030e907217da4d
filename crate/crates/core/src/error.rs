use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: spatial mismatch at input {index}: expected {expected:?}, got {got:?}")]
    ConcatMismatch {
        op: &'static str,
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{0}")]
    Argument(String),
    #[error("batch norm running statistics used in inference before any training update")]
    UninitializedStats,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error("{0}")]
    Format(#[from] FormatError),
}

/// Checkpoint decoding failures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated: {0}")]
    Truncated(String),
    #[error("shape mismatch for tensor {name}: manifest {manifest:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        manifest: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("malformed manifest at line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("payload has {extra} trailing bytes")]
    TrailingBytes { extra: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}
