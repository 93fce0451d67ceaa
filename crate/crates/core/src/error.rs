use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlaError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: field `{field}` out of range: {value}")]
    OutOfRange {
        line: usize,
        field: &'static str,
        value: String,
    },

    #[error("line {line}: duplicate observation for track `{track_id}` at t={t}")]
    DuplicateObservation { line: usize, track_id: String, t: i64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("query error at position {position}: {message}")]
    Query { position: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FlaError {
    /// Short machine-parsable class name, used for CLI error lines.
    pub fn class(&self) -> &'static str {
        match self {
            FlaError::Parse { .. } => "parse",
            FlaError::OutOfRange { .. } => "out-of-range",
            FlaError::DuplicateObservation { .. } => "duplicate",
            FlaError::Invalid(_) => "invalid",
            FlaError::Degenerate(_) => "degenerate",
            FlaError::Shape(_) => "shape",
            FlaError::Numerical(_) => "numerical",
            FlaError::Query { .. } => "query",
            FlaError::Io(_) => "io",
            FlaError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, FlaError>;
