use thiserror::Error;

pub type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("rating {0} outside 1..=5")]
    InvalidRating(u8),

    #[error("expected rule {expected}, got {got}")]
    OutOfOrder { expected: String, got: String },

    #[error("rule {0} was already rated with a different value")]
    Revision(String),

    #[error("session is complete")]
    Complete,

    #[error("empty expert id")]
    EmptyExpert,

    #[error("rule set: {0}")]
    Rules(String),

    #[error("store {path} line {line}: {msg}")]
    Corrupt { path: String, line: usize, msg: String },

    #[error("store io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
