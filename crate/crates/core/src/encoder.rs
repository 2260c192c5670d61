//! Trajectory encoder: a 3-layer feed-forward network from a flattened padded
//! trajectory (600 x 10) to `n_tokens` soft-prompt vectors of the backbone's width.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbone::tensors_checksum;
use crate::stats;
use crate::traj::{pad_trajectory, Dataset, Split, Task, TrajError, Trajectory, MAX_LEN, MAX_WIDTH};

pub const INPUT_DIM: usize = MAX_LEN * MAX_WIDTH;
pub const LAYERS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("encoder config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

pub type Result<T, E = EncoderError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: &Tensor) -> candle_core::Result<Tensor> {
        match self {
            Self::Gelu => x.gelu(),
            Self::Tanh => x.tanh(),
            Self::Relu => x.relu(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub n_tokens: usize,
    pub embed_dim: usize,
    /// Width of the two hidden layers; `None` means `n_tokens * embed_dim`.
    pub hidden_size: Option<usize>,
    pub activation: Activation,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { n_tokens: 20, embed_dim: 768, hidden_size: None, activation: Activation::Gelu, init_std: 0.02, seed: 0 }
    }
}

impl EncoderConfig {
    pub fn output_dim(&self) -> usize {
        self.n_tokens * self.embed_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden_size.unwrap_or_else(|| self.output_dim())
    }

    /// Checks the config on its own and against the backbone's embedding width.
    pub fn validate(&self, backbone_embed_dim: usize) -> Result<()> {
        if self.n_tokens == 0 || self.embed_dim == 0 || self.hidden() == 0 {
            return Err(EncoderError::Config("n_tokens, embed_dim and hidden_size must be positive".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(EncoderError::Config(format!("init_std must be positive, got {}", self.init_std)));
        }
        if self.embed_dim != backbone_embed_dim {
            return Err(EncoderError::Config(format!(
                "embed_dim {} does not match the backbone's embedding width {backbone_embed_dim}",
                self.embed_dim
            )));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> [(usize, usize); LAYERS] {
        let h = self.hidden();
        [(INPUT_DIM, h), (h, h), (h, self.output_dim())]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-task, per-feature standardization constants fitted on training trajectories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub per_task: BTreeMap<Task, FeatureStats>,
}

impl Normalizer {
    /// Fits on every distinct trajectory referenced by train-split samples.
    /// Constant features get std 1.
    pub fn fit(d: &Dataset) -> Self {
        let mut seen = HashSet::new();
        let mut columns: BTreeMap<Task, Vec<Vec<f64>>> = BTreeMap::new();
        for s in d.split(Split::Train) {
            for id in [&s.student_id, &s.expert_id] {
                if !seen.insert(id.clone()) {
                    continue;
                }
                let t = d.trajectory(id);
                let cols = columns.entry(t.task).or_insert_with(|| vec![Vec::new(); t.width()]);
                for row in &t.steps {
                    for (c, v) in row.iter().enumerate() {
                        if c < cols.len() {
                            cols[c].push(*v);
                        }
                    }
                }
            }
        }
        let per_task = columns
            .into_iter()
            .map(|(task, cols)| {
                let mut mean = Vec::with_capacity(cols.len());
                let mut std = Vec::with_capacity(cols.len());
                for c in &cols {
                    let m = stats::mean(c).unwrap_or(0.0);
                    let s = stats::population_std(c).unwrap_or(0.0);
                    mean.push(m);
                    std.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
                }
                (task, FeatureStats { mean, std })
            })
            .collect();
        Self { per_task }
    }

    /// Standardizes the valid block; tasks without fitted stats pass through unchanged.
    pub fn apply(&self, t: &Trajectory) -> Trajectory {
        let Some(fs) = self.per_task.get(&t.task) else {
            return t.clone();
        };
        let steps = t
            .steps
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(c, v)| match (fs.mean.get(c), fs.std.get(c)) {
                        (Some(m), Some(s)) => (v - m) / s,
                        _ => *v,
                    })
                    .collect()
            })
            .collect();
        Trajectory { steps, ..t.clone() }
    }
}

/// Trainable encoder parameters plus the fixed normalization constants.
pub struct TrajectoryEncoder {
    cfg: EncoderConfig,
    dtype: DType,
    weights: Vec<Var>,
    biases: Vec<Var>,
    normalizer: Normalizer,
}

impl std::fmt::Debug for TrajectoryEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrajectoryEncoder").field("cfg", &self.cfg).field("dtype", &self.dtype).finish_non_exhaustive()
    }
}

impl TrajectoryEncoder {
    /// Seeded N(0, init_std) weights and zero biases.
    pub fn init(cfg: &EncoderConfig, backbone_embed_dim: usize, dtype: DType) -> Result<Self> {
        cfg.validate(backbone_embed_dim)?;
        let normal = Normal::new(0.0, cfg.init_std).map_err(|e| EncoderError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut weights = Vec::with_capacity(LAYERS);
        let mut biases = Vec::with_capacity(LAYERS);
        for (i, o) in cfg.layer_shapes() {
            let values: Vec<f64> = (0..i * o).map(|_| normal.sample(&mut rng)).collect();
            let w = Tensor::from_vec(values, (i, o), &Device::Cpu)?.to_dtype(dtype)?;
            weights.push(Var::from_tensor(&w)?);
            biases.push(Var::zeros(o, dtype, &Device::Cpu)?);
        }
        Ok(Self { cfg: cfg.clone(), dtype, weights, biases, normalizer: Normalizer::default() })
    }

    /// Rebuilds an encoder from named tensors (`layers.{i}.weight` / `layers.{i}.bias`).
    pub fn from_tensors(
        cfg: &EncoderConfig,
        tensors: &HashMap<String, Tensor>,
        normalizer: Normalizer,
        dtype: DType,
    ) -> Result<Self> {
        let mut weights = Vec::with_capacity(LAYERS);
        let mut biases = Vec::with_capacity(LAYERS);
        for (l, (i, o)) in cfg.layer_shapes().into_iter().enumerate() {
            let get = |name: String, shape: &[usize]| -> Result<Var> {
                let t = tensors.get(&name).ok_or_else(|| EncoderError::Shape(format!("missing tensor {name}")))?;
                if t.dims() != shape {
                    return Err(EncoderError::Shape(format!("{name} has shape {:?}, expected {shape:?}", t.dims())));
                }
                Ok(Var::from_tensor(&t.to_dtype(dtype)?)?)
            };
            weights.push(get(format!("layers.{l}.weight"), &[i, o])?);
            biases.push(get(format!("layers.{l}.bias"), &[o])?);
        }
        Ok(Self { cfg: cfg.clone(), dtype, weights, biases, normalizer })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) {
        self.normalizer = normalizer;
    }

    /// Trainable variables in `[w0, b0, w1, b1, w2, b2]` order.
    pub fn vars(&self) -> Vec<Var> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w.clone(), b.clone()]).collect()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * LAYERS);
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("layers.{l}.weight"), w.as_tensor().clone()));
            out.push((format!("layers.{l}.bias"), b.as_tensor().clone()));
        }
        out
    }

    /// Detached copies of every parameter, suitable for snapshots.
    pub fn snapshot_tensors(&self) -> Result<HashMap<String, Tensor>> {
        self.named_tensors().into_iter().map(|(n, t)| Ok((n, t.detach().copy()?))).collect()
    }

    pub fn checksum(&self) -> String {
        let named = self.named_tensors();
        tensors_checksum(named.iter().map(|(n, t)| (n.as_str(), t))).expect("encoder tensors are readable")
    }

    /// Overwrites parameters in place (used to restore a checkpointed state).
    pub fn load_state(&self, state: &HashMap<String, Tensor>) -> Result<()> {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            for (name, var) in [(format!("layers.{l}.weight"), w), (format!("layers.{l}.bias"), b)] {
                let t = state.get(&name).ok_or_else(|| EncoderError::Shape(format!("missing tensor {name}")))?;
                var.set(&t.to_dtype(self.dtype)?)?;
            }
        }
        Ok(())
    }

    /// Flattened padded rows for a batch, `(B, 6000)`, after normalization.
    pub fn input_batch(&self, trajectories: &[&Trajectory]) -> Result<Tensor> {
        let mut flat = Vec::with_capacity(trajectories.len() * INPUT_DIM);
        for t in trajectories {
            let padded = pad_trajectory(&self.normalizer.apply(t))?;
            flat.extend_from_slice(padded.data());
        }
        Ok(Tensor::from_vec(flat, (trajectories.len(), INPUT_DIM), &Device::Cpu)?.to_dtype(self.dtype)?)
    }

    /// `(B, 6000)` padded inputs to `(B, n_tokens, embed_dim)` soft prompts.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let (b, width) = inputs.dims2()?;
        if width != INPUT_DIM {
            return Err(EncoderError::Shape(format!("expected {INPUT_DIM} input features, got {width}")));
        }
        let mut x = inputs.clone();
        for (l, (w, bias)) in self.weights.iter().zip(&self.biases).enumerate() {
            x = x.matmul(w.as_tensor())?.broadcast_add(bias.as_tensor())?;
            if l + 1 < LAYERS {
                x = self.cfg.activation.apply(&x)?;
            }
        }
        Ok(x.reshape((b, self.cfg.n_tokens, self.cfg.embed_dim))?)
    }

    /// Encodes trajectories into `(B, n_tokens, embed_dim)`.
    pub fn encode(&self, trajectories: &[&Trajectory]) -> Result<Tensor> {
        self.forward(&self.input_batch(trajectories)?)
    }

    /// Encodes one trajectory into `(n_tokens, embed_dim)`.
    pub fn encode_one(&self, t: &Trajectory) -> Result<Tensor> {
        Ok(self.encode(&[t])?.squeeze(0)?)
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let tensors = self.snapshot_tensors()?;
        candle_core::safetensors::save(&tensors, path)?;
        Ok(())
    }
}
