use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid allocation rule: {0}")]
    InvalidRule(String),

    #[error("gittins table has no entry for posterior counts ({a}, {b}); rebuild it with a larger --max-n")]
    GittinsMissing { a: u32, b: u32 },

    #[error("gittins table required by rule {0} but none was supplied")]
    GittinsRequired(&'static str),

    #[error("gittins calibration did not converge for state ({a}, {b}): {detail}")]
    GittinsConvergence { a: u32, b: u32, detail: String },

    #[error("malformed gittins table: {0}")]
    GittinsFormat(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("study mismatch: {0}")]
    StudyMismatch(String),

    #[error("configuration error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
