use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric guard: {0}")]
    Numeric(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("batch composition error: {0}")]
    BatchComposition(String),

    #[error("pair taxonomy error: {0}")]
    PairTaxonomy(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("integrity error: checksum mismatch in {}", .file.display())]
    Integrity { file: PathBuf },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training aborted: non-finite value in {term} at iteration {iteration}")]
    NonFinite { term: String, iteration: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("resume refused: config mismatch in fields [{}]", .fields.join(", "))]
    ResumeMismatch { fields: Vec<String> },

    #[error("io error at {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
