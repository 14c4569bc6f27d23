use std::path::PathBuf;

use thiserror::Error;

use crate::data::ImageId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed annotation XML: {message}")]
    Xml {
        path: PathBuf,
        line: u32,
        message: String,
    },

    #[error("{path}: missing or invalid element <{element}>")]
    MissingElement { path: PathBuf, element: String },

    #[error("image {image_id}: invalid box: {reason}")]
    InvalidBox { image_id: String, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("unknown image id {0}")]
    UnknownImage(ImageId),

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("invalid config: field `{field}` = {value}: {constraint}")]
    Config {
        field: String,
        value: String,
        constraint: String,
    },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("detector: {0}")]
    Detector(String),

    #[error("annotation source: {0}")]
    Annotation(String),

    #[error("pool invariant violated: {0}")]
    PoolInvariant(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Whether the failure stems from user input (bad files, bad config)
    /// rather than an internal fault.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::PoolInvariant(_) | Error::Detector(_) | Error::Annotation(_)
        )
    }
}
