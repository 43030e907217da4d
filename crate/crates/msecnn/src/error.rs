use std::path::{Path, PathBuf};

use thiserror::Error;

/// Annotation table parse failures.
#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("{path}: missing or empty header row")]
    MissingHeader { path: PathBuf },
    #[error("{path}: header needs clip_id, at least one tag column and a path column")]
    BadHeader { path: PathBuf },
    #[error("{path}: line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        path: PathBuf,
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("{path}: line {line}, column {column} ({tag}): tag cell must be 0 or 1, found {value:?}")]
    NonBinary {
        path: PathBuf,
        line: u64,
        column: usize,
        tag: String,
        value: String,
    },
    #[error("{path}: line {line}: duplicate clip_id {clip_id:?}")]
    Duplicate { path: PathBuf, line: u64, clip_id: String },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Feature cache record failures.
#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: bad magic: expected \"MSEFEAT1\", found {found:?}")]
    BadMagic { path: PathBuf, found: String },
    #[error("{path}: truncated record: {detail}")]
    Truncated { path: PathBuf, detail: String },
    #[error("{path}: record shape {found:?} does not match the front end's {expected:?}")]
    ShapeMismatch {
        path: PathBuf,
        found: (usize, usize),
        expected: (usize, usize),
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("{}: audio format error: {msg}", path.display())]
    Audio { path: PathBuf, msg: String },
    #[error("split error: path {path:?} does not start with a hex directory 0-f")]
    Split { path: String },
    #[error("{}: {msg}", path.display())]
    Document { path: PathBuf, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: msecnn_core::Error,
    },
    #[error(transparent)]
    Core(#[from] msecnn_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status: 2 for internal invariant violations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use msecnn_core::Error as E;
        match self {
            Error::Core(E::Internal(_)) => 2,
            Error::Checkpoint {
                source: E::Internal(_), ..
            } => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
