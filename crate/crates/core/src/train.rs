//! Training loop: seeded shuffled epochs, encoder-only updates, early stopping on the
//! validation loss, and on-disk checkpoints.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, SGD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::SharedLm;
use crate::encoder::{EncoderConfig, Normalizer, TrajectoryEncoder};
use crate::model::{CorgiModel, Example, ModelError};
use crate::prompt::LossScope;
use crate::traj::{CorrectionSample, Dataset, Split};

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
pub const ENCODER_WEIGHTS: &str = "encoder.safetensors";
const EVAL_CHUNK: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("train config error: {0}")]
    Config(String),
    #[error("split {0} is empty")]
    EmptySplit(Split),
    #[error("loss became non-finite at epoch {epoch}; returning the last good checkpoint")]
    Divergence { epoch: usize, last_good: Box<Checkpoint> },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint was trained against backbone {expected}, but {actual} is loaded")]
    FingerprintMismatch { expected: String, actual: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoder(#[from] crate::encoder::EncoderError),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    AdamW,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub optimizer: OptimizerKind,
    pub loss_scope: LossScope,
    /// Append the end-of-text token to every training target.
    pub append_eos: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.05,
            seed: 0,
            early_stop_patience: 20,
            optimizer: OptimizerKind::Sgd,
            loss_scope: LossScope::CorrectionOnly,
            append_eos: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(TrainError::Config("epochs, batch_size and early_stop_patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.early_stop_patience >= self.epochs {
            return Err(TrainError::Config(format!(
                "early_stop_patience {} must be below epochs {}",
                self.early_stop_patience, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-batch losses seen during the epoch.
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub dtype: String,
    pub normalizer: Normalizer,
    pub backbone_fingerprint: String,
    pub dataset_hash: String,
    pub initial_train_loss: f64,
    pub initial_valid_loss: f64,
    pub history: Vec<EpochRecord>,
    /// 0 means the untrained initialization was never improved upon.
    pub best_epoch: usize,
    pub weights_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub weights: HashMap<String, Tensor>,
}

impl Checkpoint {
    pub fn best_valid_loss(&self) -> f64 {
        match self.manifest.best_epoch {
            0 => self.manifest.initial_valid_loss,
            e => self.manifest.history[e - 1].valid_loss,
        }
    }

    pub fn dtype(&self) -> DType {
        parse_dtype(&self.manifest.dtype)
    }

    /// A fresh encoder holding this checkpoint's weights.
    pub fn encoder(&self) -> Result<TrajectoryEncoder> {
        Ok(TrajectoryEncoder::from_tensors(
            &self.manifest.encoder,
            &self.weights,
            self.manifest.normalizer.clone(),
            self.dtype(),
        )?)
    }

    /// Pairs this checkpoint with `lm`, refusing a backbone it was not trained against.
    pub fn model(&self, lm: SharedLm) -> Result<CorgiModel> {
        self.check_backbone(&lm)?;
        Ok(CorgiModel::new(lm, self.encoder()?, self.manifest.train.loss_scope, self.manifest.train.append_eos)?)
    }

    pub fn check_backbone(&self, lm: &SharedLm) -> Result<()> {
        let actual = &lm.spec().fingerprint;
        if *actual != self.manifest.backbone_fingerprint {
            return Err(TrainError::FingerprintMismatch {
                expected: self.manifest.backbone_fingerprint.clone(),
                actual: actual.clone(),
            });
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let weights_path = dir.join(ENCODER_WEIGHTS);
        candle_core::safetensors::save(&self.weights, &weights_path)?;
        let mut manifest = self.manifest.clone();
        manifest.weights_sha256 = hex::encode(Sha256::digest(std::fs::read(&weights_path)?));
        std::fs::write(dir.join(CHECKPOINT_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Loads and verifies a checkpoint; `lm` must be the backbone it was trained against.
    pub fn load(dir: &Path, lm: &SharedLm) -> Result<Self> {
        let ckpt = Self::load_unchecked(dir)?;
        ckpt.check_backbone(lm)?;
        Ok(ckpt)
    }

    /// Loads and verifies integrity without checking the backbone.
    pub fn load_unchecked(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(CHECKPOINT_MANIFEST))?;
        let manifest: CheckpointManifest =
            serde_json::from_str(&text).map_err(|e| TrainError::CorruptCheckpoint(format!("manifest: {e}")))?;
        let bytes = std::fs::read(dir.join(ENCODER_WEIGHTS))?;
        let actual = hex::encode(Sha256::digest(&bytes));
        if actual != manifest.weights_sha256 {
            return Err(TrainError::CorruptCheckpoint(format!(
                "weights hash {actual} does not match manifest {}",
                manifest.weights_sha256
            )));
        }
        let weights = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)
            .map_err(|e| TrainError::CorruptCheckpoint(e.to_string()))?;
        Ok(Self { manifest, weights })
    }
}

fn dtype_name(dtype: DType) -> String {
    format!("{dtype:?}").to_lowercase()
}

fn parse_dtype(s: &str) -> DType {
    match s {
        "f64" => DType::F64,
        _ => DType::F32,
    }
}

enum Opt {
    Sgd(SGD),
    AdamW(AdamW),
}

impl Opt {
    fn new(kind: OptimizerKind, vars: Vec<candle_core::Var>, lr: f64) -> Result<Self> {
        Ok(match kind {
            OptimizerKind::Sgd => Opt::Sgd(SGD::new(vars, lr)?),
            OptimizerKind::AdamW => {
                Opt::AdamW(AdamW::new(vars, ParamsAdamW { lr, weight_decay: 0.0, ..Default::default() })?)
            }
        })
    }

    fn backward_step(&mut self, loss: &Tensor) -> Result<()> {
        match self {
            Opt::Sgd(o) => o.backward_step(loss)?,
            Opt::AdamW(o) => o.backward_step(loss)?,
        }
        Ok(())
    }
}

/// Mean per-sample loss of `model` over one split.
pub fn mean_loss(model: &CorgiModel, d: &Dataset, split: Split) -> Result<f64> {
    let samples: Vec<&CorrectionSample> = d.split(split).collect();
    if samples.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    let losses = model.sample_losses(d, &samples, EVAL_CHUNK)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean correction loss of a checkpoint over `split`; never mutates parameters.
pub fn validate(ckpt: &Checkpoint, lm: SharedLm, d: &Dataset, split: Split) -> Result<f64> {
    let model = ckpt.model(lm)?;
    mean_loss(&model, d, split)
}

/// Trains a fresh encoder against the frozen `lm` and returns the best-validation checkpoint.
pub fn train(d: &Dataset, lm: SharedLm, enc_cfg: &EncoderConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let train_samples: Vec<&CorrectionSample> = d.split(Split::Train).collect();
    if train_samples.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if d.count(Split::Valid) == 0 {
        return Err(TrainError::EmptySplit(Split::Valid));
    }
    let dtype = lm.dtype();
    let mut encoder = TrajectoryEncoder::init(enc_cfg, lm.spec().embed_dim, dtype)?;
    encoder.set_normalizer(Normalizer::fit(d));
    let model = CorgiModel::new(lm.clone(), encoder, cfg.loss_scope, cfg.append_eos)?;
    let mut opt = Opt::new(cfg.optimizer, model.encoder().vars(), cfg.learning_rate)?;

    let initial_train_loss = mean_loss(&model, d, Split::Train)?;
    let initial_valid_loss = mean_loss(&model, d, Split::Valid)?;
    let mut manifest = CheckpointManifest {
        encoder: enc_cfg.clone(),
        train: cfg.clone(),
        dtype: dtype_name(dtype),
        normalizer: model.encoder().normalizer().clone(),
        backbone_fingerprint: lm.spec().fingerprint.clone(),
        dataset_hash: d.content_hash(),
        initial_train_loss,
        initial_valid_loss,
        history: Vec::new(),
        best_epoch: 0,
        weights_sha256: String::new(),
    };
    let mut best_loss = initial_valid_loss;
    let mut best_weights = model.encoder().snapshot_tensors()?;
    let snapshot = |manifest: &CheckpointManifest, weights: &HashMap<String, Tensor>| Checkpoint {
        manifest: manifest.clone(),
        weights: weights.clone(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Example<'_>> = idx.iter().map(|&i| Example::of(d, train_samples[i])).collect();
            let loss = model.batch_losses(&batch)?.mean_all()?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(TrainError::Divergence { epoch, last_good: Box::new(snapshot(&manifest, &best_weights)) });
            }
            total += value * batch.len() as f64;
            opt.backward_step(&loss)?;
        }
        let valid_loss = mean_loss(&model, d, Split::Valid)?;
        if !valid_loss.is_finite() {
            return Err(TrainError::Divergence { epoch, last_good: Box::new(snapshot(&manifest, &best_weights)) });
        }
        manifest.history.push(EpochRecord { epoch, train_loss: total / train_samples.len() as f64, valid_loss });
        if valid_loss < best_loss {
            best_loss = valid_loss;
            manifest.best_epoch = epoch;
            best_weights = model.encoder().snapshot_tensors()?;
        } else if epoch - manifest.best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    Ok(snapshot(&manifest, &best_weights))
}
