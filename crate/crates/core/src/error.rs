use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("schema violation in {record} #{index}: {field}: {message}")]
    Schema {
        record: &'static str,
        index: usize,
        field: &'static str,
        message: String,
    },

    #[error("dangling reference: {0}")]
    DanglingReference(String),

    #[error("invalid box for class {class_id}: start {t_start} must be < end {t_end}")]
    InvalidBox { class_id: usize, t_start: f64, t_end: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("inconsistent metadata: {0}")]
    Metadata(String),

    #[error("class {class} has {have} assets but at least {need} are required to populate every split")]
    TooFewAssets { class: usize, have: usize, need: usize },

    #[error("threshold calibration failed: {0}")]
    Calibration(String),

    #[error("loss {kind} requires {what}")]
    MissingState { kind: &'static str, what: &'static str },

    #[error("non-finite loss at epoch {epoch}, batch {batch} ({term})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        term: &'static str,
    },

    #[error("evaluation set is empty{0}")]
    EmptyEvaluation(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user-supplied configuration or input schema.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Schema { .. } | Error::DanglingReference(_)
        )
    }
}
