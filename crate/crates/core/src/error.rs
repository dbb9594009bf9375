//! Error types shared across the crate.
//!
//! Errors are grouped into the classes the CLI maps to exit codes:
//! configuration (2), data format / IO (3), numerical or structural (4).

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid distribution or model parameter (non-finite, out of domain).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Inconsistent or unusable configuration (schedules, masks, dimensions).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data with a best-effort location.
    #[error("data format error at row {row}, column {col}: {msg}")]
    DataFormat {
        msg: String,
        row: usize,
        col: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Sampler reached a state with no valid move (e.g. component collapse).
    #[error("numerical degeneracy: {0}")]
    Degeneracy(String),

    /// Model structure violated (e.g. a Dirichlet column with zero mass).
    #[error("structural error: {0}")]
    Structural(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code class for the CLI: 2 config, 3 data/io, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::DataFormat { .. } | Error::Io { .. } | Error::Serde(_) => 3,
            Error::Parameter(_) | Error::Degeneracy(_) | Error::Structural(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
