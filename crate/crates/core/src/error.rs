use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The variants are grouped by how the command line reports them: I/O
/// problems, invalid input, and a missing model each map to their own exit
/// code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("file truncated: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("topology mismatch: {0}")]
    Topology(String),

    #[error("sample out of range: {0}")]
    SampleRange(String),

    #[error("file too short: {0}")]
    ShortFile(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: u64, detail: String },

    #[error("invalid curve: {0}")]
    Curve(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("no model for group {group} ({codec}, {method}); available: {available}")]
    NoModel {
        codec: String,
        group: String,
        method: String,
        available: String,
    },

    #[error("model metadata mismatch: {0}")]
    MetadataMismatch(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Process exit code: 1 for I/O, 3 for a missing model, 2 for everything
    /// else (validation).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::NoModel { .. } => 3,
            _ => 2,
        }
    }
}
