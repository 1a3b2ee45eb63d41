//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. The variants
//! map onto the process exit codes used by the CLI: configuration problems
//! exit 2, data problems exit 3, I/O problems exit 4. Anything else (shape
//! or state misuse inside the engine) is a programming error surfaced as
//! exit 1.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer received data of the wrong shape.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// A numeric argument is outside its legal range.
    #[error("invalid range: {0}")]
    InvalidRange(String),

    /// An operation was called in the wrong order (e.g. backward before
    /// forward) or on an object in an unusable state.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A class label is outside the fixed mode set.
    #[error("invalid label: {0}")]
    InvalidLabel(String),

    /// Inputs to a computation are inconsistent with each other.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A user-supplied configuration value or combination is rejected.
    #[error("config error: {0}")]
    Config(String),

    /// A data file failed to parse; names the file and line.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// A weight file is malformed, truncated, or inconsistent.
    #[error("corrupt weight file {path}: {message}")]
    CorruptFile { path: String, message: String },

    /// A dataset is too small for the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A dataset is structurally broken: missing manifest, missing trial
    /// files, duplicate ids.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// An underlying I/O operation failed; names the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI uses for this error.
    ///
    /// 2 = configuration error, 3 = data error, 4 = I/O error,
    /// 1 = internal misuse (a bug in the caller, not in the inputs).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InvalidLabel(_)
            | Error::Parse { .. }
            | Error::CorruptFile { .. }
            | Error::InsufficientData(_)
            | Error::Dataset(_) => 3,
            Error::Io { .. } => 4,
            Error::InvalidShape(_)
            | Error::InvalidRange(_)
            | Error::InvalidState(_)
            | Error::InvalidInput(_) => 1,
        }
    }
}
