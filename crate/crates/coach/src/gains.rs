//! Learning gain between the first and last trial, aggregated per condition.

use corgi_core::eval::format_pm;
use corgi_core::stats::summarize;
use serde::{Deserialize, Serialize};

use crate::session::{Condition, TeachingSession, MAX_TRIALS};
use crate::{CoachError, Result};

/// Score of trial 3 minus score of trial 1.
pub fn learning_gain(session: &TeachingSession) -> Result<f64> {
    if session.trials.len() < MAX_TRIALS {
        return Err(CoachError::IncompleteSession {
            session_id: session.session_id.clone(),
            trials: session.trials.len(),
        });
    }
    Ok(session.trials[MAX_TRIALS - 1].score - session.trials[0].score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSummary {
    pub condition: Condition,
    pub mean: f64,
    /// Sample standard deviation; 0 when `n == 1`.
    pub std: f64,
    pub n: usize,
    pub single_session: bool,
    pub display: String,
}

/// Summarizes the gains of complete sessions in `condition`; incomplete ones are ignored.
pub fn aggregate_gains<'a>(
    sessions: impl IntoIterator<Item = &'a TeachingSession>,
    condition: Condition,
) -> Result<GainSummary> {
    let gains: Vec<f64> = sessions
        .into_iter()
        .filter(|s| s.condition == condition && s.is_complete())
        .map(learning_gain)
        .collect::<Result<_>>()?;
    let s = summarize(&gains).ok_or(CoachError::NoSessions(condition))?;
    Ok(GainSummary {
        condition,
        mean: s.mean,
        std: s.std,
        n: s.n,
        single_session: s.n == 1,
        display: format_pm(s.mean, s.std),
    })
}
