use std::path::Path;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("utterance {0} has no present phonetic traits")]
    EmptyUtterance(String),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("evidence score undefined: no phone present in both {enroll} and {test}")]
    UndefinedEvidence { enroll: String, test: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: u64, msg: String },

    #[error("unknown utterance id {0}")]
    MissingUtterance(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: &str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Short stable name of the error class, used in machine-parsable CLI output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Dimension(_) => "dimension",
            Error::EmptyUtterance(_) => "empty-utterance",
            Error::Batch(_) => "batch",
            Error::Numeric(_) => "numeric",
            Error::UndefinedEvidence { .. } => "undefined-evidence",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Diverged { .. } => "diverged",
            Error::MissingUtterance(_) => "missing-utterance",
            Error::Io { .. } => "io",
        }
    }
}
