#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("no such {what}: {id}")]
    NotFound { what: &'static str, id: String },

    /// Items must be answered in order; `expected` is the session cursor.
    #[error("item {got} submitted but the session expects item {expected}")]
    Conflict { expected: usize, got: usize },

    #[error("invalid submission: {0}")]
    Validation(String),

    #[error(transparent)]
    Model(#[from] hierdial::Error),

    #[error("journal: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = StudyError> = std::result::Result<T, E>;
