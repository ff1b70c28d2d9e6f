use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NarbError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NarbError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no acceptability score for narrative `{0}`")]
    MissingScore(String),

    #[error("span {start}..{end} of `{doc_id}` lies outside the text ({len} chars)")]
    SpanOutOfText {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("duplicate key `{0}`")]
    DuplicateKey(String),

    #[error("missing embedding for key `{0}`")]
    MissingKey(String),

    #[error("corrupt store: {0}")]
    CorruptStore(String),

    #[error("non-finite activation in layer {layer} for `{key}`")]
    NonFinite { layer: usize, key: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("response schema error: {0}")]
    Schema(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl NarbError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NarbError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        NarbError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
