use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("client error ({client}): {message}")]
    Client { client: String, message: String },

    #[error("roster error: {0}")]
    Roster(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("insufficient pool: need at least 2 QA pairs, got {0}")]
    InsufficientPool(usize),

    #[error("dangling reference to qa_id {0}")]
    DanglingReference(String),

    #[error("insufficient corpus: need {needed} eligible value ids, found {found}")]
    InsufficientCorpus { needed: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("empty reference set")]
    EmptyReference,

    #[error("empty query set")]
    EmptyQueries,

    #[error("test label {0} was not seen in the training split")]
    LabelMismatch(String),

    #[error("empty text for required field {0}")]
    EmptyText(&'static str),

    #[error("no items for value id {0}")]
    EmptyGroup(String),

    #[error("unknown value id {0}")]
    UnknownValueId(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("sidecar has {sidecar} entries but store has {rows} rows")]
    SidecarMismatch { rows: usize, sidecar: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn client(client: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Client {
            client: client.into(),
            message: message.into(),
        }
    }
}
