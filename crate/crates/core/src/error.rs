use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CodanoError> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by [`ErrorClass`], which the command-line front end
/// maps onto process exit codes.
#[derive(Debug, Error)]
pub enum CodanoError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error in `{op}`: {detail}")]
    Numeric { op: String, detail: String },
    #[error("unsupported mesh: {0}")]
    UnsupportedMesh(String),
    #[error("mode count error: {0}")]
    ModeCount(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("partition error: codomain width {width} is not divisible by group width {group}")]
    Partition { width: usize, group: usize },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{0}` already exists")]
    VariableExists(String),
    #[error("query point {index} lies outside the domain box")]
    OutOfDomain { index: usize },
    #[error("training state error: {0}")]
    TrainingState(String),
    #[error("dataset schema error: {0}")]
    DatasetSchema(String),
    #[error("dataset pairing error: {0}")]
    DatasetPairing(String),
    #[error("stability error: {bound} violated ({detail})")]
    Stability { bound: String, detail: String },
    #[error("fraction error: {0}")]
    Fraction(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("bad container format: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
    Io,
}

impl CodanoError {
    pub fn shape(msg: impl Into<String>) -> Self {
        CodanoError::Shape(msg.into())
    }

    pub fn numeric(op: impl Into<String>, detail: impl Into<String>) -> Self {
        CodanoError::Numeric {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CodanoError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use CodanoError::*;
        match self {
            Config(_) | Fraction(_) => ErrorClass::Usage,
            Numeric { .. } | Stability { .. } | TrainingState(_) => ErrorClass::Numeric,
            Io { .. } => ErrorClass::Io,
            _ => ErrorClass::Data,
        }
    }
}
