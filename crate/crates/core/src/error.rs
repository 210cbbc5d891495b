use std::path::PathBuf;

/// Errors raised by the analysis pipeline.
///
/// Variants fall into two families: domain errors (a metric is undefined,
/// the data cannot support the request) and configuration / input errors.
/// [`Error::is_domain`] distinguishes them so that front ends can map them
/// to different exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient replication: item {item} has {available} annotators, {requested} requested")]
    InsufficientReplication {
        item: u32,
        available: usize,
        requested: usize,
    },

    #[error("stratification failed: value class {class} has only {count} entries (need at least 2)")]
    Stratification { class: u8, count: usize },

    #[error("singular normal equations in {side} row {row}; use a regularisation > 0")]
    SingularSystem { side: &'static str, row: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("undefined {metric}: {reason}")]
    Undefined {
        metric: &'static str,
        reason: String,
    },

    #[error("item {0} has no annotation records")]
    ItemWithoutRecords(String),

    #[error("input mismatch: {0}")]
    InputMismatch(String),

    #[error("schema error in {path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("value `{value}` is outside the {scale} domain")]
    OutOfDomain { value: String, scale: &'static str },

    #[error("malformed input in {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// True for errors caused by the data itself rather than by how the
    /// tool was invoked or configured.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::InsufficientReplication { .. }
                | Error::Stratification { .. }
                | Error::SingularSystem { .. }
                | Error::Undefined { .. }
                | Error::ItemWithoutRecords(_)
                | Error::InputMismatch(_)
                | Error::OutOfDomain { .. }
                | Error::EmptyInput(_)
        )
    }

    pub(crate) fn undefined(metric: &'static str, reason: impl Into<String>) -> Self {
        Error::Undefined {
            metric,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
