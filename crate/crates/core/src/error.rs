use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("unknown group `{0}`")]
    UnknownGroup(String),

    #[error("group `{0}` has no calibration samples")]
    EmptyGroup(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("{}: row {row}, column `{column}`: {message}", path.display())]
    Ingest {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("split left group `{group}` without samples in the {part} part; try another seed or stratified splitting")]
    VanishingGroup { group: String, part: &'static str },

    #[error("unsupported document: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
