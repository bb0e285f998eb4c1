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

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("line {line}: invalid label {label:?}")]
    InvalidLabel { line: usize, label: String },

    #[error("invalid label scheme: {0}")]
    InvalidScheme(String),

    #[error("invalid dialect model: {0}")]
    InvalidModel(String),

    #[error("covariate out of range at document {index}: {value}")]
    InvalidCovariate { index: usize, value: f64 },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("document {index} has no tokens")]
    EmptyDocument { index: usize },

    #[error("design matrix is singular")]
    SingularDesign,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
