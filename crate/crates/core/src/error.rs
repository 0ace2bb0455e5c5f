use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: line {line}: {message}", path.display())]
    MalformedRow {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid record {id}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unresolved revision for record {0}")]
    UnresolvedRevision(String),

    #[error("annotator {annotator} already voted on {record_id}")]
    DuplicateVote {
        annotator: String,
        record_id: String,
    },

    #[error("label {label} is not valid for {scheme}")]
    InvalidLabel { label: i8, scheme: String },

    #[error("unknown record id {0}")]
    UnknownRecord(String),

    #[error("revision log line {line}: {message}")]
    CorruptLog { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
