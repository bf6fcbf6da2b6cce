use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("{file}: dangling id {id} ({what})")]
    DanglingId { file: String, id: u64, what: &'static str },

    #[error("{file}: duplicate id {id}")]
    DuplicateId { file: String, id: u64 },

    #[error("invalid {what} id {id} (count {count})")]
    InvalidId { what: &'static str, id: usize, count: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad embedding header: {0}")]
    BadHeader(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate feature row {row}: projected norm is zero")]
    ZeroNorm { row: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("no pseudo-labels could be generated: {0}")]
    EmptyPseudoLabels(String),

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: &str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// Errors caused by numerical breakdown rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::EmptyPseudoLabels(_) | Error::ZeroNorm { .. }
        )
    }
}
