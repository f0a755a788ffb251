use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A structured document failed to parse.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A value violated a documented range or shape constraint.
    #[error("validation error: {0}")]
    Validation(String),

    /// A trajectory or message broke a structural invariant.
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    /// The judge answered, but not in a form we can use.
    #[error("judge format error: {reason} (raw response: {raw:?})")]
    JudgeFormat { reason: String, raw: String },

    /// The judge transport failed.
    #[error("judge request failed: {0}")]
    Judge(String),

    #[error("embedding request failed: {0}")]
    Embedding(String),

    #[error("chat model request failed: {0}")]
    Model(String),

    /// Cross-file references that do not resolve.
    #[error("dangling references: {}", ids.join(", "))]
    Dangling { ids: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn judge_format(reason: impl Into<String>, raw: impl Into<String>) -> Self {
        Error::JudgeFormat {
            reason: reason.into(),
            raw: raw.into(),
        }
    }
}
