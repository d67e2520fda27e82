use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the workbench can report.
///
/// Variants are grouped by the exit status the CLI maps them to: configuration
/// problems, data problems, and failures inside a pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    // --- configuration -----------------------------------------------------
    #[error("config error in {file}{}: {message}", field_suffix(field))]
    Config {
        file: String,
        field: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("task `{task}` uses external dataset labels and cannot be verified from text")]
    ExternalLabelTask { task: String },

    // --- data --------------------------------------------------------------
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("hash mismatch for {path}: manifest says {expected}, file hashes to {actual}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("row-count mismatch: matrix {matrix} has {matrix_rows} rows, record file {records} has {record_rows}")]
    RowCountMismatch {
        matrix: PathBuf,
        records: PathBuf,
        matrix_rows: usize,
        record_rows: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("non-finite value at row {row}, column {col} of {context}")]
    NonFinite {
        row: usize,
        col: usize,
        context: String,
    },

    #[error("malformed npy data: {0}")]
    Npy(String),

    #[error("malformed {what} at {path}: {message}")]
    Parse {
        what: &'static str,
        path: PathBuf,
        message: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    // --- stages --------------------------------------------------------------
    #[error("stage `{stage}` requires `{upstream}`, which is disabled and has no cached outputs")]
    MissingUpstream { stage: String, upstream: String },

    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
}

fn field_suffix(field: &str) -> String {
    if field.is_empty() {
        String::new()
    } else {
        format!(", field `{field}`")
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn config(file: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            file: file.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn dims(expected: usize, found: usize, context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected,
            found,
            context: context.into(),
        }
    }

    /// Process exit status used by the CLI: 1 config, 2 data, 3 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) | Error::ExternalLabelTask { .. } => 1,
            Error::Io { .. }
            | Error::MissingFile(_)
            | Error::HashMismatch { .. }
            | Error::RowCountMismatch { .. }
            | Error::DimensionMismatch { .. }
            | Error::NonFinite { .. }
            | Error::Npy(_)
            | Error::Parse { .. }
            | Error::InsufficientData(_) => 2,
            Error::MissingUpstream { .. } | Error::Stage { .. } => 3,
        }
    }
}
