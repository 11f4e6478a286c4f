//! Rater-facing service: randomized one-at-a-time rule presentation backed by
//! an append-only JSONL log.

mod error;
pub mod http;
pub mod session;
pub mod store;

pub use error::{Result, ServiceError};
pub use http::{router, serve};
pub use session::{NextRule, SessionManager, SessionSummary, SubmitAck};
