//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate external document id: {0}")]
    DuplicateDocId(String),

    #[error("empty query")]
    EmptyQuery,

    #[error("no query terms")]
    NoQueryTerms,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value {0} outside [-1, 1]")]
    ValueOutOfRange(f64),

    #[error("invalid format in {path} line {line}: {msg}")]
    InvalidFormat {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("document {0} missing from index")]
    DocMissing(String),

    #[error("non-finite gradient encountered ({0})")]
    NonFiniteGradient(String),

    #[error("no training triples")]
    NoTriples,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("need at least {folds} queries for {folds} folds, got {got}")]
    TooFewQueries { folds: usize, got: usize },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Read a whole file, attaching the path to any I/O error so callers
/// can tell which file failed.
pub fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}
