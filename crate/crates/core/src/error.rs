use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants carry enough location information (row, column, line, id) to
/// point at the offending record. Errors raised while reading a file are
/// wrapped in [`Error::File`]; errors raised inside a pipeline stage are
/// wrapped in [`Error::Stage`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("stage '{stage}': {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// Structural problem in a binary file (bad magic, truncated payload,
    /// trailing bytes, zero dimension).
    #[error("malformed file: {detail}")]
    Format { detail: String },

    /// Row-level problem in a CSV file. `line` is 1-based.
    #[error("line {line}: {detail}")]
    Csv { line: usize, detail: String },

    #[error("duplicate image id '{id}' at row {row}")]
    DuplicateId { id: String, row: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected} elements, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("zero-norm row at index {row}")]
    ZeroNormRow { row: usize },

    #[error("image id '{id}' has no label")]
    MissingLabel { id: String },

    #[error("non-landmark pool is empty")]
    EmptyPool,

    #[error("train set is empty")]
    EmptyTrain,

    #[error("ground truth contains no landmark images")]
    EmptyGroundTruth,

    #[error("duplicate prediction for image id '{id}'")]
    DuplicatePrediction { id: String },

    #[error("model {model}: {role} id list differs from model 0")]
    IdListMismatch { model: usize, role: &'static str },

    #[error("invalid parameter: {detail}")]
    InvalidParameter { detail: String },

    #[error("internal error: {detail}")]
    Internal { detail: String },
}

impl Error {
    /// Attach a file path to an error produced while parsing that file.
    pub fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Attach a pipeline stage name.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code contract: 1 validation error, 2 I/O error,
    /// 3 internal error. Wrappers defer to the wrapped error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Internal { .. } => 3,
            Error::File { source, .. } | Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
