use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The variants map onto the three CLI exit classes through [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: expected dimension {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid point cloud: {0}")]
    Cloud(String),

    #[error("duplicate target points at indices {first} and {second}")]
    DuplicatePoints { first: usize, second: usize },

    #[error("scoring error: target point {index} has zero norm")]
    ZeroNorm { index: usize },

    #[error("selection error: {0}")]
    Selection(String),

    #[error("synthesis error: {0}")]
    Synthesis(String),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("training data error: {0}")]
    TrainingData(String),

    #[error("loss error: {0}")]
    Loss(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("solver did not converge: energy {energy:.3e} after {iterations} iterations")]
    NotConverged { energy: f64, iterations: usize },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 1,
            ErrorClass::Io => 2,
            ErrorClass::Numeric => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Io => "io",
            ErrorClass::Numeric => "numeric",
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::Cloud(_)
            | Error::DuplicatePoints { .. }
            | Error::Shape { .. }
            | Error::Selection(_) => ErrorClass::Config,
            Error::Io { .. } | Error::Format { .. } => ErrorClass::Io,
            Error::ZeroNorm { .. }
            | Error::Synthesis(_)
            | Error::Codec(_)
            | Error::TrainingData(_)
            | Error::Loss(_)
            | Error::Metrics(_)
            | Error::NotConverged { .. } => ErrorClass::Numeric,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
