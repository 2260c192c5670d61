//! Frozen causal language models: token embeddings, masked correction loss and
//! nucleus-sampling generation.
//!
//! Backbone weights are held as plain tensors (never `Var`s), so no optimizer can reach
//! them; gradients still flow through every op into the soft-prompt inputs.

mod gpt2;
mod lstm;
pub mod sampling;
mod snapshot;
pub mod tiny;

use std::sync::Arc;

use candle_core::{DType, Device, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use gpt2::{Gpt2, Gpt2Config};
pub use lstm::{LstmLm, LSTM_LAYERS};
pub use snapshot::{
    load_backbone, pin_snapshot, read_manifest, write_snapshot, SnapshotManifest, TextTokenizer, MANIFEST_FILE,
    TOKENIZER_FILE, WEIGHTS_FILE,
};

use crate::prompt::PromptSequence;

#[derive(Debug, thiserror::Error)]
pub enum BackboneError {
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("tokenizer error: {0}")]
    Tokenizer(String),
    #[error("snapshot error: {0}")]
    Manifest(String),
    #[error("snapshot fingerprint mismatch: manifest pins {expected}, files hash to {actual}")]
    FingerprintMismatch { expected: String, actual: String },
    #[error("embedding width mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("sequence length {len} exceeds the backbone's {max} positions")]
    TooLong { len: usize, max: usize },
    #[error("text to embed is empty")]
    EmptyText,
    #[error("prompt has no masked-in positions")]
    EmptyMask,
    #[error("prompt is in training mode; generation needs a prefix without correction tokens")]
    NotGenerationPrompt,
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = BackboneError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// The pretrained decoder as shipped in the snapshot.
    PretrainedCausal,
    /// Same architecture, seeded random weights.
    RandomInitSameArch,
    /// 3-layer LSTM on top of the snapshot's pretrained token embeddings.
    Recurrent3LayerPretrainedEmbeddings,
}

impl std::str::FromStr for BackboneKind {
    type Err = BackboneError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained_causal" | "pretrained" => Ok(Self::PretrainedCausal),
            "random_init_same_arch" | "random" => Ok(Self::RandomInitSameArch),
            "recurrent_3layer_pretrained_embeddings" | "lstm" => Ok(Self::Recurrent3LayerPretrainedEmbeddings),
            other => Err(BackboneError::Manifest(format!("unknown backbone kind {other:?}"))),
        }
    }
}

impl BackboneKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::PretrainedCausal => "pretrained_causal",
            Self::RandomInitSameArch => "random_init_same_arch",
            Self::Recurrent3LayerPretrainedEmbeddings => "recurrent_3layer_pretrained_embeddings",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// Identifies the exact weights + tokenizer (and variant seed) in use.
    pub fingerprint: String,
    pub vocab_fingerprint: String,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub eos_id: u32,
}

/// A frozen causal LM operating on input embeddings.
pub trait CausalLm: Send + Sync {
    fn spec(&self) -> &BackboneSpec;
    fn tokenizer(&self) -> &TextTokenizer;
    fn dtype(&self) -> DType;
    /// Rows of the word-embedding table for `ids`, shape `(ids.len(), d)`.
    fn token_embeddings(&self, ids: &[u32]) -> Result<Tensor>;
    /// `(B, L, d)` embeddings to `(B, L, d)` final hidden states.
    fn hidden_states(&self, inputs: &Tensor) -> Result<Tensor>;
    /// `(B, L, d)` embeddings to `(B, L, V)` next-token logits.
    fn logits(&self, inputs: &Tensor) -> Result<Tensor>;
    fn named_parameters(&self) -> Vec<(String, Tensor)>;
    fn max_positions(&self) -> Option<usize>;
}

pub type SharedLm = Arc<dyn CausalLm>;

pub(crate) struct Gpt2Backbone {
    pub(crate) model: Gpt2,
    pub(crate) tokenizer: TextTokenizer,
    pub(crate) spec: BackboneSpec,
    pub(crate) dtype: DType,
}

impl CausalLm for Gpt2Backbone {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }
    fn tokenizer(&self) -> &TextTokenizer {
        &self.tokenizer
    }
    fn dtype(&self) -> DType {
        self.dtype
    }
    fn token_embeddings(&self, ids: &[u32]) -> Result<Tensor> {
        gather_rows(self.model.wte(), ids)
    }
    fn hidden_states(&self, inputs: &Tensor) -> Result<Tensor> {
        self.model.hidden_states(inputs)
    }
    fn logits(&self, inputs: &Tensor) -> Result<Tensor> {
        self.model.logits(inputs)
    }
    fn named_parameters(&self) -> Vec<(String, Tensor)> {
        self.model.named_parameters().to_vec()
    }
    fn max_positions(&self) -> Option<usize> {
        Some(self.model.config().n_positions)
    }
}

pub(crate) struct LstmBackbone {
    pub(crate) model: LstmLm,
    pub(crate) tokenizer: TextTokenizer,
    pub(crate) spec: BackboneSpec,
    pub(crate) dtype: DType,
}

impl CausalLm for LstmBackbone {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }
    fn tokenizer(&self) -> &TextTokenizer {
        &self.tokenizer
    }
    fn dtype(&self) -> DType {
        self.dtype
    }
    fn token_embeddings(&self, ids: &[u32]) -> Result<Tensor> {
        gather_rows(self.model.embeddings(), ids)
    }
    fn hidden_states(&self, inputs: &Tensor) -> Result<Tensor> {
        self.model.hidden_states(inputs)
    }
    fn logits(&self, inputs: &Tensor) -> Result<Tensor> {
        self.model.logits(inputs)
    }
    fn named_parameters(&self) -> Vec<(String, Tensor)> {
        self.model.named_parameters().to_vec()
    }
    fn max_positions(&self) -> Option<usize> {
        None
    }
}

fn gather_rows(table: &Tensor, ids: &[u32]) -> Result<Tensor> {
    let idx = Tensor::new(ids, &Device::Cpu)?;
    Ok(table.index_select(&idx, 0)?)
}

/// SHA-256 over every named tensor (name, shape, f64 little-endian values), in order.
pub fn tensors_checksum<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<String> {
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update(name.as_bytes());
        for d in t.dims() {
            h.update((*d as u64).to_le_bytes());
        }
        let values = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        for v in values {
            h.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Checksum of every backbone parameter; unchanged by any amount of prompt training.
pub fn backbone_checksum(lm: &dyn CausalLm) -> Result<String> {
    let params = lm.named_parameters();
    tensors_checksum(params.iter().map(|(n, t)| (n.as_str(), t)))
}

/// Tokenizes `text` and looks up its word embeddings.
pub fn embed_tokens(lm: &dyn CausalLm, text: &str) -> Result<(Vec<u32>, Tensor)> {
    if text.is_empty() {
        return Err(BackboneError::EmptyText);
    }
    let ids = lm.tokenizer().encode(text)?;
    if ids.is_empty() {
        return Err(BackboneError::EmptyText);
    }
    let emb = lm.token_embeddings(&ids)?;
    Ok((ids, emb))
}

/// Per-prompt mean negative log-likelihood over masked-in positions, shape `(B,)`.
///
/// Prompts of different lengths are right-padded with zero embeddings; padded
/// positions are never masked in, and causal attention keeps them from influencing
/// earlier positions.
pub fn batch_correction_losses(lm: &dyn CausalLm, prompts: &[PromptSequence]) -> Result<Tensor> {
    let b = prompts.len();
    let max_len = prompts.iter().map(PromptSequence::len).max().unwrap_or(0);
    let d = lm.spec().embed_dim;
    let mut rows = Vec::with_capacity(b);
    let mut select = Vec::new();
    let mut targets = Vec::new();
    let mut owner = Vec::new();
    for (i, p) in prompts.iter().enumerate() {
        let mask = p.loss_mask().ok_or(BackboneError::EmptyMask)?;
        let positions: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| j).collect();
        if positions.is_empty() || positions[0] == 0 {
            return Err(BackboneError::EmptyMask);
        }
        for (&pos, &tgt) in positions.iter().zip(p.target_ids()) {
            // logits at position pos-1 predict the token at pos
            select.push((i * max_len + pos - 1) as u32);
            targets.push(tgt);
            owner.push(i);
        }
        let emb = p.embeddings();
        let pad = max_len - p.len();
        let row = if pad > 0 {
            Tensor::cat(&[emb, &Tensor::zeros((pad, d), emb.dtype(), emb.device())?], 0)?
        } else {
            emb.clone()
        };
        rows.push(row);
    }
    let inputs = Tensor::stack(&rows, 0)?;
    let logits = lm.logits(&inputs)?;
    let vocab = logits.dim(D::Minus1)?;
    let flat = logits.reshape((b * max_len, vocab))?;
    let picked = flat.index_select(&Tensor::new(select.as_slice(), &Device::Cpu)?, 0)?;
    let logp = candle_nn::ops::log_softmax(&picked, D::Minus1)?;
    let tgt = Tensor::new(targets.as_slice(), &Device::Cpu)?.unsqueeze(1)?;
    let nll = logp.gather(&tgt, 1)?.squeeze(1)?.neg()?;
    // averaging matrix: (B, M) with 1/count_i on sample i's own positions
    let m = owner.len();
    let mut counts = vec![0usize; b];
    for &o in &owner {
        counts[o] += 1;
    }
    let mut avg = vec![0.0f64; b * m];
    for (j, &o) in owner.iter().enumerate() {
        avg[o * m + j] = 1.0 / counts[o] as f64;
    }
    let avg = Tensor::from_vec(avg, (b, m), &Device::Cpu)?.to_dtype(nll.dtype())?;
    Ok(avg.matmul(&nll.unsqueeze(1)?)?.squeeze(1)?)
}

/// Mean NLL over the masked-in (correction) positions of one prompt.
pub fn correction_loss(lm: &dyn CausalLm, q: &PromptSequence) -> Result<Tensor> {
    Ok(batch_correction_losses(lm, std::slice::from_ref(q))?.squeeze(0)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { temperature: 0.5, top_p: 0.9, max_new_tokens: 40, seed: 0 }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(BackboneError::InvalidConfig(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackboneError::InvalidConfig(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.max_new_tokens == 0 {
            return Err(BackboneError::InvalidConfig("max_new_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub token_ids: Vec<u32>,
    /// Set when decoding stopped at `max_new_tokens` (or the position limit) rather
    /// than at the end-of-text token.
    pub truncated: bool,
}

/// Samples a continuation of a generation-mode prompt with temperature + nucleus sampling.
pub fn generate_correction(lm: &dyn CausalLm, prefix: &PromptSequence, cfg: &GenerationConfig) -> Result<Generation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    decode(lm, prefix, cfg.max_new_tokens, |logits| {
        sampling::sample_token(logits, cfg.temperature, cfg.top_p, &mut rng)
    })
}

/// Argmax decoding, used as the zero-temperature reference.
pub fn greedy_decode(lm: &dyn CausalLm, prefix: &PromptSequence, max_new_tokens: usize) -> Result<Generation> {
    decode(lm, prefix, max_new_tokens, sampling::argmax)
}

fn decode(
    lm: &dyn CausalLm,
    prefix: &PromptSequence,
    max_new_tokens: usize,
    mut choose: impl FnMut(&[f64]) -> usize,
) -> Result<Generation> {
    if prefix.loss_mask().is_some() {
        return Err(BackboneError::NotGenerationPrompt);
    }
    let eos = lm.spec().eos_id;
    let mut seq = prefix.embeddings().clone();
    let mut ids = Vec::new();
    let mut truncated = true;
    for _ in 0..max_new_tokens {
        let len = seq.dim(0)?;
        if lm.max_positions().is_some_and(|m| len >= m) {
            break;
        }
        let logits = lm.logits(&seq.unsqueeze(0)?)?;
        let last = logits.squeeze(0)?.get(len - 1)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let next = choose(&last) as u32;
        if next == eos {
            truncated = false;
            break;
        }
        ids.push(next);
        seq = Tensor::cat(&[&seq, &lm.token_embeddings(&[next])?], 0)?;
    }
    let text = lm.tokenizer().decode(&ids)?;
    Ok(Generation { text: text.trim().to_string(), token_ids: ids, truncated })
}
