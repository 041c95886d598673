use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the perception range ±{half_x} × ±{half_y} m")]
    OutOfRange {
        x: f64,
        y: f64,
        half_x: f64,
        half_y: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown layout `{0}` (expected straight, curve, intersection or parking)")]
    UnknownLayout(String),

    #[error("unknown element id {0}")]
    UnknownElement(u64),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("inconsistent ids: {0}")]
    Inconsistent(String),

    #[error("missing dataset: {0}")]
    MissingDataset(PathBuf),

    #[error("missing artifact {0} (run the producing command first)")]
    MissingArtifact(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
