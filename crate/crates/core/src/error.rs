use std::path::PathBuf;

use thiserror::Error;

/// Which end of a planning query failed the node-membership check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Start,
    Goal,
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Start => f.write_str("start"),
            Endpoint::Goal => f.write_str("goal"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a precondition (bad index, mismatched shapes, bad config value).
    #[error("usage error: {0}")]
    Usage(String),

    /// A file could not be decoded.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Training or evaluation produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{0} voxel is not a traversable node")]
    NotTraversable(Endpoint),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
