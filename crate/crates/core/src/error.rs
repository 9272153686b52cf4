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

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    /// A data-level problem tied to a specific line of an input file.
    #[error("{path}, row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("no observations")]
    NoObservations,

    #[error("invalid data: {0}")]
    Data(String),

    #[error("coding: {0}")]
    Coding(String),

    #[error("invalid model spec: {}", .0.join("; "))]
    Spec(Vec<String>),

    #[error("parameter vector: {0}")]
    Parameters(String),

    #[error("respondent {respondent} has zero probability under every class")]
    ZeroProbability { respondent: String },

    #[error("category {category} is pinned in class {class}; use the degenerate probability")]
    PinnedCategory { class: String, category: String },

    #[error("estimation: {0}")]
    Estimation(String),

    #[error("design: {0}")]
    Design(String),

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("wtp: {0}")]
    Wtp(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn row(path: impl Into<PathBuf>, row: usize, message: impl Into<String>) -> Self {
        Error::Row {
            path: path.into(),
            row,
            message: message.into(),
        }
    }
}
