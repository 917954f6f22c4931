use thiserror::Error;

/// Errors raised anywhere in the prediction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error for student {student}: {message}")]
    Validation { student: String, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("day {day} is out of range: {message}")]
    OutOfRange { day: i64, message: String },

    #[error("student {0} has unresolved status")]
    Unresolved(String),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn validation(student: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            student: student.to_string(),
            message: message.into(),
        }
    }

    /// Coarse error family, used by front ends to choose an exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::Validation { .. }
            | Error::EmptyInput(_)
            | Error::InsufficientData(_)
            | Error::OutOfRange { .. }
            | Error::Unresolved(_)
            | Error::Data(_)
            | Error::Calibration(_) => ErrorKind::Data,
            Error::Config(_) | Error::Misuse(_) => ErrorKind::Usage,
            Error::Domain(_)
            | Error::Degenerate(_)
            | Error::UndefinedMetric(_)
            | Error::Model(_) => ErrorKind::Model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Model,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
