use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integer overflow computing {0}")]
    Overflow(&'static str),

    #[error("metric {metric} takes {expected}, not {got}")]
    Arity {
        metric: &'static str,
        expected: &'static str,
        got: &'static str,
    },

    #[error("n = {n} exceeds the enumeration budget of {cap}")]
    Budget { n: u64, cap: u64 },

    /// A normal approximation was requested where its applicability rule fails.
    #[error("approximation not applicable: {0}")]
    Applicability(String),

    #[error("metric {metric} is not supported by the {method} path")]
    UnsupportedMetric {
        metric: &'static str,
        method: &'static str,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("invalid value for field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

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
