use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the navigation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("agent speed {speed:.6} exceeds preferred speed {v_pref:.6}")]
    SpeedExceeded { speed: f64, v_pref: f64 },

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint dimension mismatch: {0}")]
    Dimension(String),

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("episode index {index} out of range ({len} episodes)")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
