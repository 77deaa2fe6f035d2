use std::path::PathBuf;

/// Errors produced by the correction layer and its harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a precondition (bad label index, wrong dimension, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A rules file could not be parsed.
    #[error("rules line {line}: {message}")]
    RuleParse { line: usize, message: String },

    /// A dataset file could not be loaded.
    #[error("dataset record {record}: {message}")]
    Load { record: usize, message: String },

    /// The synthetic generator was given a configuration it cannot realize.
    #[error("generation error: {0}")]
    Generation(String),

    /// A loss or gradient became non-finite during training.
    #[error("numerical abort on trajectory {seq_id:?}: {message}")]
    Numerical { seq_id: String, message: String },

    /// A checkpoint or report file was malformed or inconsistent.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
