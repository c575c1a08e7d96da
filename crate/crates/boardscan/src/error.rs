use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// The `category` method yields the stable one-word tag the CLI prints on
/// failure, so scripts can dispatch on it without parsing prose.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Arg(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: parse error at byte {offset}: {reason}")]
    PnmParse {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    #[error("{path}: truncated payload: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: bad float-map: {reason}")]
    FmapFormat { path: PathBuf, reason: String },

    #[error("{path}: bad checkpoint: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("no eligible defect site: {0}")]
    SiteNotFound(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// One-word machine-parsable category for CLI exit diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Arg(_) => "args",
            Error::Shape(_) => "shape",
            Error::PnmParse { .. } | Error::Truncated { .. } => "format",
            Error::FmapFormat { .. } | Error::Checkpoint { .. } => "format",
            Error::SiteNotFound(_) => "site",
            Error::Training(_) => "training",
            Error::Metric(_) => "metric",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
