//! Teaching sessions and what participants are allowed to see of them.

use std::fmt;
use std::str::FromStr;

use corgi_core::traj::Trajectory;
use serde::{Deserialize, Serialize};

use crate::{CoachError, Result};

pub const MAX_TRIALS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Corgi,
    Random,
    None,
    Visual,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Self::Corgi, Self::Random, Self::None, Self::Visual];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Corgi => "corgi",
            Self::Random => "random",
            Self::None => "none",
            Self::Visual => "visual",
        }
    }

    pub fn serves_text(self) -> bool {
        matches!(self, Self::Corgi | Self::Random)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = CoachError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CoachError::Validation(format!("unknown condition {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// 1-based.
    pub index: usize,
    pub trajectory: Trajectory,
    pub score: f64,
    pub correction_served: Option<String>,
    pub overlay_served: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingSession {
    pub session_id: String,
    pub stimulus_id: String,
    pub condition: Condition,
    pub seed: u64,
    pub trials: Vec<Trial>,
    pub created_at: String,
}

impl TeachingSession {
    pub fn is_complete(&self) -> bool {
        self.trials.len() >= MAX_TRIALS
    }

    pub fn view(&self, overlay: Option<&[Vec<[f64; 2]>]>) -> SessionView {
        SessionView {
            session_id: self.session_id.clone(),
            stimulus_id: self.stimulus_id.clone(),
            condition: self.condition,
            trials: self.trials.iter().map(TrialView::from).collect(),
            remaining: MAX_TRIALS - self.trials.len().min(MAX_TRIALS),
            overlay: match self.condition {
                Condition::Visual => overlay.map(<[_]>::to_vec),
                _ => None,
            },
        }
    }
}

/// A trial as returned to the participant: the submitted drawing is not echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub trial_index: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<String>,
    pub overlay_served: bool,
}

impl From<&Trial> for TrialView {
    fn from(t: &Trial) -> Self {
        Self {
            trial_index: t.index,
            score: t.score,
            correction: t.correction_served.clone(),
            overlay_served: t.overlay_served,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub stimulus_id: String,
    pub condition: Condition,
    pub trials: Vec<TrialView>,
    pub remaining: usize,
    /// Expert stroke polylines, present only for the visual condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay: Option<Vec<Vec<[f64; 2]>>>,
}
