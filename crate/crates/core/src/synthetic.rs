//! Synthetic drawing data whose correction is a deterministic function of the student:
//! students are uniformly scaled copies of an expert shape, and the correction says which
//! way to rescale.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::train::TrainConfig;
use crate::traj::{CorrectionSample, Dataset, Dist, Role, Source, Split, Task, Trajectory};

pub const BIGGER: &str = "make it bigger";
pub const SMALLER: &str = "make it smaller";
const CENTER: f64 = 0.5;
const DOMAIN: &str = "arabic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub n_experts: usize,
    pub steps: usize,
    /// Students are scaled by a factor drawn from `[1 + min_scale, 1 + max_scale]` or
    /// its reciprocal.
    pub min_scale: f64,
    pub max_scale: f64,
    /// Half-width of the uniform per-coordinate jitter on students.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 48,
            n_valid: 16,
            n_test: 20,
            n_experts: 4,
            steps: 24,
            min_scale: 0.25,
            max_scale: 0.6,
            jitter: 0.005,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Eight train samples plus a small valid split.
    pub fn overfit() -> Self {
        Self { n_train: 8, n_valid: 4, n_test: 0, ..Self::default() }
    }
}

/// Training schedule for the separable suite: small batches so each epoch takes several steps.
pub fn suite_train_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 60, batch_size: 8, early_stop_patience: 20, seed, ..TrainConfig::default() }
}

/// Fifty epochs with early stopping effectively off.
pub fn overfit_train_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 50, batch_size: 8, early_stop_patience: 49, seed, ..TrainConfig::default() }
}

pub fn suite_encoder_config(embed_dim: usize, seed: u64) -> EncoderConfig {
    EncoderConfig { embed_dim, seed, ..EncoderConfig::default() }
}

/// A closed curve around the canvas center; `k` picks the lobe count and phase.
fn expert_shape(k: usize, steps: usize) -> Vec<Vec<f64>> {
    let lobes = (k % 3) as f64 + 2.0;
    let phase = k as f64 * 0.9;
    (0..steps)
        .map(|i| {
            let a = TAU * i as f64 / (steps - 1) as f64;
            let r = 0.2 + 0.05 * (lobes * a + phase).cos();
            vec![CENTER + r * a.cos(), CENTER + r * a.sin()]
        })
        .collect()
}

fn scaled(expert: &[Vec<f64>], factor: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    expert
        .iter()
        .map(|p| {
            p.iter()
                .map(|&v| {
                    let noise = if jitter > 0.0 { rng.gen_range(-jitter..jitter) } else { 0.0 };
                    CENTER + factor * (v - CENTER) + noise
                })
                .collect()
        })
        .collect()
}

/// Balanced classes in every split: alternate scaled-down ("make it bigger") and scaled-up
/// ("make it smaller") students, round-robin over experts.
pub fn bigger_smaller(cfg: &SyntheticConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_experts = cfg.n_experts.max(1);
    let mut trajectories: Vec<Trajectory> = (0..n_experts)
        .map(|k| {
            Trajectory::new(format!("expert-{k}"), Task::Drawing, DOMAIN, Role::Expert, expert_shape(k, cfg.steps))
                .expect("valid shape")
        })
        .collect();
    let mut samples = Vec::new();
    let splits = [(Split::Train, cfg.n_train), (Split::Valid, cfg.n_valid), (Split::Test, cfg.n_test)];
    let mut index = 0;
    for (split, n) in splits {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for i in order {
            let expert = index % n_experts;
            let grow = i % 2 == 0;
            let magnitude = 1.0 + rng.gen_range(cfg.min_scale..=cfg.max_scale);
            let factor = if grow { 1.0 / magnitude } else { magnitude };
            let steps = scaled(&trajectories[expert].steps, factor, cfg.jitter, &mut rng);
            let id = format!("student-{index:03}");
            trajectories.push(
                Trajectory::new(&id, Task::Drawing, DOMAIN, Role::Student, steps)
                    .expect("valid shape")
                    .with_meta("scale", format!("{factor:.4}")),
            );
            samples.push(CorrectionSample {
                id: format!("sample-{index:03}"),
                student_id: id,
                expert_id: format!("expert-{expert}"),
                correction: if grow { BIGGER } else { SMALLER }.to_string(),
                split,
                dist: Dist::InDomain,
                source: Source::Human,
                parent_id: None,
            });
            index += 1;
        }
    }
    Dataset::new(samples, trajectories).expect("synthetic dataset is consistent")
}

/// The other label.
pub fn swapped(label: &str) -> &'static str {
    if label == BIGGER {
        SMALLER
    } else {
        BIGGER
    }
}
