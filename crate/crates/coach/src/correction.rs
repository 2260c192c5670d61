//! Where trial corrections come from in each text condition.

use corgi_core::backbone::GenerationConfig;
use corgi_core::eval::baselines::random_baseline;
use corgi_core::model::CorgiModel;
use corgi_core::seed::derive_seed;
use corgi_core::traj::{Dataset, Task, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::stimulus::Stimulus;
use crate::{CoachError, Result};

pub trait Corrector: Send + Sync {
    fn correct(&self, student: &Trajectory, stimulus: &Stimulus, seed: u64) -> Result<String>;
}

const MAX_EMPTY_RETRIES: u64 = 8;

/// Decodes from the trained model on (submitted drawing, hidden expert).
pub struct CorgiCorrector {
    model: CorgiModel,
    decode: GenerationConfig,
}

impl CorgiCorrector {
    pub fn new(model: CorgiModel, decode: GenerationConfig) -> Self {
        Self { model, decode }
    }
}

impl Corrector for CorgiCorrector {
    fn correct(&self, student: &Trajectory, stimulus: &Stimulus, seed: u64) -> Result<String> {
        for attempt in 0..MAX_EMPTY_RETRIES {
            let cfg = GenerationConfig { seed: derive_seed(seed, attempt), ..self.decode.clone() };
            let g = self
                .model
                .generate(student, &stimulus.expert, &cfg)
                .map_err(|e| CoachError::Generation(e.to_string()))?;
            let text = g.text.trim();
            if !text.is_empty() {
                return Ok(text.to_string());
            }
        }
        Err(CoachError::Generation(format!("{MAX_EMPTY_RETRIES} empty decodes")))
    }
}

/// A uniformly drawn human train annotation of the stimulus' script.
pub struct RandomCorrector {
    annotations: Dataset,
}

impl RandomCorrector {
    pub fn new(annotations: Dataset) -> Self {
        Self { annotations }
    }
}

impl Corrector for RandomCorrector {
    fn correct(&self, _student: &Trajectory, stimulus: &Stimulus, seed: u64) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_baseline(&self.annotations, Task::Drawing, &stimulus.script, &mut rng)
            .map(|s| s.correction.clone())
            .map_err(|e| CoachError::Generation(e.to_string()))
    }
}

/// Always returns the same text.
pub struct FixedCorrector(pub String);

impl Corrector for FixedCorrector {
    fn correct(&self, _: &Trajectory, _: &Stimulus, _: u64) -> Result<String> {
        Ok(self.0.clone())
    }
}
