//! Interactive drawing-teaching service: sessions of three scored trials, corrections served
//! per study condition, preference collection and learning-gain reports.

pub mod correction;
pub mod gains;
pub mod http;
pub mod preference;
pub mod score;
pub mod service;
pub mod session;
pub mod stimulus;
pub mod store;

use std::path::PathBuf;

use session::Condition;

pub use service::{Coach, TrialSubmission};

#[derive(Debug, thiserror::Error)]
pub enum CoachError {
    #[error("unknown stimulus {0}")]
    UnknownStimulus(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown preference pair {0}")]
    UnknownPair(String),
    #[error("session {0} already has 3 trials")]
    SessionComplete(String),
    #[error("session {session_id} has {trials} of 3 trials")]
    IncompleteSession { session_id: String, trials: usize },
    #[error("no complete sessions in condition {0}")]
    NoSessions(Condition),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("condition {0} is not configured on this server")]
    ConditionUnavailable(Condition),
    #[error("correction generation failed: {0}")]
    Generation(String),
    #[error("{path}:{line}: corrupt event log: {message}")]
    CorruptLog { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Traj(#[from] corgi_core::traj::TrajError),
    #[error(transparent)]
    Env(#[from] corgi_core::envs::EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CoachError> = std::result::Result<T, E>;
