//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("non-finite {what}")]
    NonFinite { what: &'static str },

    #[error("gate scheduled during active dead time (t = {t_ns} ns, dead until {dead_until_ns} ns)")]
    GateDuringDeadTime { t_ns: i64, dead_until_ns: i64 },

    #[error("delay {delay_ns} ns outside threshold curve range [{min_ns}, {max_ns}] ns")]
    DelayOutOfRange {
        delay_ns: f64,
        min_ns: f64,
        max_ns: f64,
    },

    #[error("{0}")]
    Domain(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
