use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("dataset family `{family}` has {count} tables, need at least 3")]
    FamilyTooSmall { family: String, count: usize },

    #[error("ground truth has no version pairs")]
    EmptyVersionPairs,

    #[error("empty similarity category: {0}")]
    EmptyCategory(&'static str),

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("sequence has no tokens")]
    EmptySequence,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
