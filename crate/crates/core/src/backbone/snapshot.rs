//! Local model snapshots: a weights blob, a tokenizer file and a manifest pinning both
//! by content hash.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokenizers::Tokenizer;

use super::{
    BackboneError, BackboneKind, BackboneSpec, Gpt2, Gpt2Backbone, Gpt2Config, LstmBackbone, LstmLm, Result, SharedLm,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
const FORMAT: &str = "corgi-lm-snapshot/1";

/// Tokenizer plus the id of its end-of-text token.
#[derive(Clone)]
pub struct TextTokenizer {
    inner: Tokenizer,
    eos_id: u32,
}

impl std::fmt::Debug for TextTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TextTokenizer").field("eos_id", &self.eos_id).finish_non_exhaustive()
    }
}

impl TextTokenizer {
    pub fn new(inner: Tokenizer, eos_token: &str) -> Result<Self> {
        let eos_id = inner
            .token_to_id(eos_token)
            .ok_or_else(|| BackboneError::Tokenizer(format!("end-of-text token {eos_token:?} not in vocabulary")))?;
        Ok(Self { inner, eos_id })
    }

    pub fn from_bytes(bytes: &[u8], eos_token: &str) -> Result<Self> {
        let inner = Tokenizer::from_bytes(bytes).map_err(|e| BackboneError::Tokenizer(e.to_string()))?;
        Self::new(inner, eos_token)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let enc = self.inner.encode(text, false).map_err(|e| BackboneError::Tokenizer(e.to_string()))?;
        Ok(enc.get_ids().to_vec())
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        self.inner.decode(ids, true).map_err(|e| BackboneError::Tokenizer(e.to_string()))
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    pub fn vocab_size(&self) -> usize {
        self.inner.get_vocab_size(true)
    }

    pub fn to_json(&self) -> Result<String> {
        self.inner.to_string(false).map_err(|e| BackboneError::Tokenizer(e.to_string()))
    }

    #[cfg(test)]
    pub(crate) fn toy_for_tests() -> Self {
        let json = r#"{"version":"1.0","truncation":null,"padding":null,"added_tokens":[],
            "normalizer":null,"pre_tokenizer":{"type":"Whitespace"},"post_processor":null,"decoder":null,
            "model":{"type":"WordLevel","vocab":{"a":0,"b":1,"<eos>":2},"unk_token":"<eos>"}}"#;
        Self::from_bytes(json.as_bytes(), "<eos>").unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub format: String,
    pub architecture: String,
    pub config: Gpt2Config,
    pub weights: String,
    pub tokenizer: String,
    pub eos_token: String,
    /// sha256(sha256(weights) || sha256(tokenizer)), hex.
    pub fingerprint: String,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn combine(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Writes a manifest for weights and tokenizer files already present in `dir`.
pub fn pin_snapshot(
    dir: &Path,
    config: Gpt2Config,
    weights: &str,
    tokenizer: &str,
    eos_token: &str,
) -> Result<SnapshotManifest> {
    config.validate()?;
    let w = sha256_file(&dir.join(weights))?;
    let t = sha256_file(&dir.join(tokenizer))?;
    let manifest = SnapshotManifest {
        format: FORMAT.into(),
        architecture: "gpt2".into(),
        config,
        weights: weights.into(),
        tokenizer: tokenizer.into(),
        eos_token: eos_token.into(),
        fingerprint: combine(&[&w, &t]),
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Writes weights, tokenizer and manifest into `dir`.
pub fn write_snapshot(
    dir: &Path,
    config: Gpt2Config,
    weights: &HashMap<String, Tensor>,
    tokenizer: &TextTokenizer,
    eos_token: &str,
) -> Result<SnapshotManifest> {
    std::fs::create_dir_all(dir)?;
    candle_core::safetensors::save(weights, dir.join(WEIGHTS_FILE))?;
    std::fs::write(dir.join(TOKENIZER_FILE), tokenizer.to_json()?)?;
    pin_snapshot(dir, config, WEIGHTS_FILE, TOKENIZER_FILE, eos_token)
}

pub fn read_manifest(dir: &Path) -> Result<SnapshotManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| BackboneError::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let m: SnapshotManifest = serde_json::from_str(&text)?;
    if m.format != FORMAT || m.architecture != "gpt2" {
        return Err(BackboneError::Manifest(format!(
            "unsupported snapshot format {:?} / architecture {:?}",
            m.format, m.architecture
        )));
    }
    Ok(m)
}

/// Loads a snapshot, verifying its fingerprint, and builds the requested backbone variant.
///
/// `variant_seed` only matters for the randomly initialized variants; it is folded into
/// their fingerprint so checkpoints cannot be mixed up across variants.
pub fn load_backbone(dir: &Path, kind: BackboneKind, variant_seed: u64, dtype: DType) -> Result<SharedLm> {
    let m = read_manifest(dir)?;
    let w_hash = sha256_file(&dir.join(&m.weights))?;
    let t_hash = sha256_file(&dir.join(&m.tokenizer))?;
    let actual = combine(&[&w_hash, &t_hash]);
    if actual != m.fingerprint {
        return Err(BackboneError::FingerprintMismatch { expected: m.fingerprint, actual });
    }
    let tok_bytes = std::fs::read(dir.join(&m.tokenizer))?;
    let tokenizer = TextTokenizer::from_bytes(&tok_bytes, &m.eos_token)?;
    let weights = candle_core::safetensors::load(dir.join(&m.weights), &Device::Cpu)?;
    let cfg = m.config.clone();
    let fingerprint = match kind {
        BackboneKind::PretrainedCausal => m.fingerprint.clone(),
        other => combine(&[&m.fingerprint, other.label(), &variant_seed.to_string()]),
    };
    let spec = BackboneSpec {
        kind,
        fingerprint,
        vocab_fingerprint: t_hash,
        embed_dim: cfg.n_embd,
        vocab_size: cfg.vocab_size,
        eos_id: tokenizer.eos_id(),
    };
    if (tokenizer.eos_id() as usize) >= cfg.vocab_size {
        return Err(BackboneError::Manifest("end-of-text id lies outside the embedding table".into()));
    }
    Ok(match kind {
        BackboneKind::PretrainedCausal => {
            let model = Gpt2::from_tensors(cfg, &weights, dtype)?;
            Arc::new(Gpt2Backbone { model, tokenizer, spec, dtype })
        }
        BackboneKind::RandomInitSameArch => {
            let random = cfg.random_weights(variant_seed, dtype)?;
            let model = Gpt2::from_tensors(cfg, &random, dtype)?;
            Arc::new(Gpt2Backbone { model, tokenizer, spec, dtype })
        }
        BackboneKind::Recurrent3LayerPretrainedEmbeddings => {
            let pretrained = Gpt2::from_tensors(cfg, &weights, dtype)?;
            let model = LstmLm::new(pretrained.wte().clone(), variant_seed, dtype)?;
            Arc::new(LstmBackbone { model, tokenizer, spec, dtype })
        }
    })
}
