use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One post whose analysis could not be obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalystFailure {
    pub post_id: String,
    pub cause: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at row {row}: {reason}")]
    Format { row: usize, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("probability out of range or NaN: {0}")]
    InvalidProbability(f64),

    #[error("schema error in field `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("no JSON object found in model output: {0}")]
    Parse(String),

    #[error("analyst failed for {} post(s): {}", .0.len(), describe_failures(.0))]
    Analyst(Vec<AnalystFailure>),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("length mismatch: {left} predictions vs {right} gold labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("nothing to evaluate")]
    EmptyEvaluation,

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(field: &str, reason: impl Into<String>) -> Self {
        Error::Schema {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

fn describe_failures(failures: &[AnalystFailure]) -> String {
    failures
        .iter()
        .map(|f| format!("{} ({})", f.post_id, f.cause))
        .collect::<Vec<_>>()
        .join(", ")
}
