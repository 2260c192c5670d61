//! The teaching loop: create a session, score up to three trials, serve corrections.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use corgi_core::seed::derive_seed;
use corgi_core::traj::resample_uniform;
use corgi_core::traj::{Role, Task, Trajectory, MAX_LEN};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correction::Corrector;
use crate::gains::{aggregate_gains, GainSummary};
use crate::preference::{preference_rates, PreferenceItem, PreferencePrompt, PreferenceRecord, PreferenceSubmission};
use crate::session::{Condition, SessionView, TeachingSession, Trial, TrialView};
use crate::stimulus::{stimulus_map, Stimulus, StimulusView};
use crate::store::{Event, Store};
use crate::{CoachError, Result};

/// A drawing as captured on the unit canvas: strokes of `[x, y]` or `[x, y, t]` points, y up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSubmission {
    pub strokes: Vec<Vec<Vec<f64>>>,
}

impl TrialSubmission {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self { strokes: vec![t.steps.clone()] }
    }

    /// Concatenates the strokes into a width-2 trajectory, resampled down to the length cap.
    pub fn to_trajectory(&self, id: &str, script: &str) -> Result<Trajectory> {
        let mut steps = Vec::new();
        for p in self.strokes.iter().flatten() {
            if !(p.len() == 2 || p.len() == 3) {
                return Err(CoachError::Validation(format!("points are [x, y] or [x, y, t], got {} values", p.len())));
            }
            if !p[..2].iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(CoachError::Validation(format!("point {:?} is off the unit canvas", &p[..2])));
            }
            steps.push(p[..2].to_vec());
        }
        if steps.is_empty() {
            return Err(CoachError::Validation("empty drawing".into()));
        }
        let raw = steps.len();
        let t = Trajectory::new(id, Task::Drawing, script, Role::Student, steps)?
            .with_meta("strokes", self.strokes.len().to_string());
        Ok(if raw > MAX_LEN { resample_uniform(&t, MAX_LEN)?.with_meta("resampled_from", raw.to_string()) } else { t })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub stimulus_id: String,
    pub condition: Condition,
    /// Drawn at random when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

pub struct Coach {
    stimuli: BTreeMap<String, Stimulus>,
    corgi: Option<Arc<dyn Corrector>>,
    random: Option<Arc<dyn Corrector>>,
    pairs: BTreeMap<String, PreferenceItem>,
    store: Store,
    session_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Coach {
    /// Opens (or creates) the event store under `data_dir`.
    pub fn open(data_dir: &Path, stimuli: Vec<Stimulus>) -> Result<Self> {
        Ok(Self {
            stimuli: stimulus_map(stimuli)?,
            corgi: None,
            random: None,
            pairs: BTreeMap::new(),
            store: Store::open(data_dir)?,
            session_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_corgi(mut self, c: Arc<dyn Corrector>) -> Self {
        self.corgi = Some(c);
        self
    }

    pub fn with_random(mut self, c: Arc<dyn Corrector>) -> Self {
        self.random = Some(c);
        self
    }

    pub fn with_preference_items(mut self, items: impl IntoIterator<Item = PreferenceItem>) -> Self {
        self.pairs.extend(items.into_iter().map(|i| (i.pair_id.clone(), i)));
        self
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn stimulus_ids(&self) -> Vec<String> {
        self.stimuli.keys().cloned().collect()
    }

    fn stimulus(&self, id: &str) -> Result<&Stimulus> {
        self.stimuli.get(id).ok_or_else(|| CoachError::UnknownStimulus(id.to_string()))
    }

    pub fn stimulus_view(&self, id: &str) -> Result<StimulusView> {
        self.stimulus(id)?.view()
    }

    fn corrector(&self, c: Condition) -> Result<Option<&Arc<dyn Corrector>>> {
        let slot = match c {
            Condition::Corgi => &self.corgi,
            Condition::Random => &self.random,
            Condition::None | Condition::Visual => return Ok(None),
        };
        slot.as_ref().map(Some).ok_or(CoachError::ConditionUnavailable(c))
    }

    fn view(&self, s: &TeachingSession) -> SessionView {
        let overlay = self.stimuli.get(&s.stimulus_id).map(|st| st.render.as_slice());
        s.view(overlay)
    }

    pub fn create_session(&self, req: &CreateSession) -> Result<SessionView> {
        self.stimulus(&req.stimulus_id)?;
        self.corrector(req.condition)?;
        let session = TeachingSession {
            session_id: uuid::Uuid::new_v4().to_string(),
            stimulus_id: req.stimulus_id.clone(),
            condition: req.condition,
            seed: req.seed.unwrap_or_else(rand::random),
            trials: Vec::new(),
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        self.store.append(&Event::SessionCreated { session: session.clone() })?;
        Ok(self.view(&session))
    }

    pub fn session(&self, id: &str) -> Result<TeachingSession> {
        self.store.read(|s| s.sessions.get(id).cloned()).ok_or_else(|| CoachError::UnknownSession(id.to_string()))
    }

    pub fn session_view(&self, id: &str) -> Result<SessionView> {
        Ok(self.view(&self.session(id)?))
    }

    fn session_lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.session_locks.lock().expect("lock table poisoned").entry(id.to_string()).or_default().clone()
    }

    /// Scores the drawing and serves the condition's feedback; the trial is recorded only
    /// once everything has succeeded.
    pub fn submit_trial(&self, session_id: &str, sub: &TrialSubmission) -> Result<TrialView> {
        let lock = self.session_lock(session_id);
        let _guard = lock.lock().expect("session lock poisoned");
        let session = self.session(session_id)?;
        if session.is_complete() {
            return Err(CoachError::SessionComplete(session_id.to_string()));
        }
        let stimulus = self.stimulus(&session.stimulus_id)?;
        let index = session.trials.len() + 1;
        let trajectory = sub.to_trajectory(&format!("{session_id}-t{index}"), &stimulus.script)?;
        let score = stimulus.normalizer.score(&trajectory)?;
        let correction_served = match self.corrector(session.condition)? {
            Some(c) => Some(c.correct(&trajectory, stimulus, derive_seed(session.seed, index as u64))?),
            None => None,
        };
        let trial = Trial {
            index,
            trajectory,
            score,
            correction_served,
            overlay_served: session.condition == Condition::Visual,
        };
        let view = TrialView::from(&trial);
        self.store.append(&Event::TrialRecorded { session_id: session_id.to_string(), trial })?;
        Ok(view)
    }

    pub fn preference_prompt(&self, pair_id: &str, seed: u64) -> Result<PreferencePrompt> {
        let item = self.pairs.get(pair_id).ok_or_else(|| CoachError::UnknownPair(pair_id.to_string()))?;
        Ok(item.prompt(&mut ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn submit_preference(&self, sub: &PreferenceSubmission) -> Result<String> {
        let item = self.pairs.get(&sub.pair_id).ok_or_else(|| CoachError::UnknownPair(sub.pair_id.clone()))?;
        self.record_preference(item.record(sub)?)
    }

    /// Validates and stores a complete record; returns its id.
    pub fn record_preference(&self, record: PreferenceRecord) -> Result<String> {
        record.validate()?;
        let id = uuid::Uuid::new_v4().to_string();
        self.store.append(&Event::PreferenceRecorded { id: id.clone(), record })?;
        Ok(id)
    }

    pub fn preference(&self, id: &str) -> Option<PreferenceRecord> {
        self.store.read(|s| s.preferences.get(id).cloned())
    }

    pub fn preference_rates(&self) -> BTreeMap<String, f64> {
        self.store.read(|s| preference_rates(s.preferences.values()))
    }

    pub fn gains(&self, condition: Condition) -> Result<GainSummary> {
        self.store.read(|s| aggregate_gains(s.sessions.values(), condition))
    }
}
