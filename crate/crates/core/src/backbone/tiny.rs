//! Builds small GPT-2 snapshots for tests and laptop-scale runs: a byte-level BPE
//! tokenizer trained on a phrase corpus and a briefly pretrained decoder.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokenizers::models::bpe::{BpeTrainerBuilder, BPE};
use tokenizers::pre_tokenizers::byte_level::ByteLevel;
use tokenizers::{AddedToken, NormalizerWrapper, PostProcessorWrapper, Tokenizer, TokenizerImpl};

use super::{write_snapshot, BackboneError, Gpt2, Gpt2Config, Result, SnapshotManifest, TextTokenizer};

pub const EOS_TOKEN: &str = "<|endoftext|>";

#[derive(Debug, Clone)]
pub struct TinyConfig {
    pub embed_dim: usize,
    pub n_layer: usize,
    pub n_head: usize,
    pub n_positions: usize,
    pub vocab_size: usize,
    pub pretrain_steps: usize,
    pub batch_size: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TinyConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            n_layer: 2,
            n_head: 4,
            n_positions: 96,
            vocab_size: 400,
            pretrain_steps: 300,
            batch_size: 16,
            window: 24,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

/// Short imperative feedback phrases used when no corpus is supplied.
pub fn default_corpus() -> Vec<String> {
    let phrases = [
        "make it bigger",
        "make it smaller",
        "make the loop bigger",
        "make the loop smaller",
        "draw it a bit bigger",
        "draw it a bit smaller",
        "turn slightly later",
        "turn slightly earlier",
        "turn a bit later",
        "slow down before the spot",
        "brake earlier",
        "speed up at the start",
        "reverse into the spot",
        "go forward not backward",
        "stop closer to the goal",
        "make the top line longer",
        "make the bottom curve rounder",
        "close the circle",
        "start further to the left",
        "end further to the right",
        "lift your arms higher",
        "bend your knees more",
        "jump higher",
        "step more slowly",
        "keep the lines straight",
        "the stroke should be shorter",
        "the stroke should be longer",
        "good job keep going",
    ];
    phrases.iter().map(|s| s.to_string()).collect()
}

/// Words the prompt scaffold embeds; always part of the tokenizer training text.
const SCAFFOLD: [&str; 3] = ["student", "expert", "correction:"];

/// Trains a byte-level BPE tokenizer whose vocabulary also contains `EOS_TOKEN`.
pub fn train_tokenizer(corpus: &[String], vocab_size: usize) -> Result<TextTokenizer> {
    let tok_err = |e: tokenizers::Error| BackboneError::Tokenizer(e.to_string());
    let mut trainer = BpeTrainerBuilder::new()
        .vocab_size(vocab_size)
        .min_frequency(1)
        .show_progress(false)
        .special_tokens(vec![AddedToken::from(EOS_TOKEN, true)])
        .initial_alphabet(ByteLevel::alphabet().into_iter().collect())
        .build();
    let mut tok: TokenizerImpl<BPE, NormalizerWrapper, ByteLevel, PostProcessorWrapper, ByteLevel> =
        TokenizerImpl::new(BPE::default());
    tok.with_pre_tokenizer(Some(ByteLevel::default().add_prefix_space(false)));
    tok.with_decoder(Some(ByteLevel::default()));
    let mut lines: Vec<String> = corpus.to_vec();
    lines.extend(SCAFFOLD.iter().map(|s| s.to_string()));
    tok.train(&mut trainer, lines.iter()).map_err(tok_err)?;
    let json = tok.to_string(false).map_err(tok_err)?;
    let full = Tokenizer::from_bytes(json.as_bytes()).map_err(tok_err)?;
    TextTokenizer::new(full, EOS_TOKEN)
}

/// Trains a tokenizer, pretrains a small decoder on `corpus` and writes the snapshot.
pub fn build_tiny_snapshot(dir: &Path, corpus: &[String], cfg: &TinyConfig) -> Result<SnapshotManifest> {
    let tokenizer = train_tokenizer(corpus, cfg.vocab_size)?;
    let gcfg = Gpt2Config {
        vocab_size: tokenizer.vocab_size(),
        n_positions: cfg.n_positions,
        n_embd: cfg.embed_dim,
        n_layer: cfg.n_layer,
        n_head: cfg.n_head,
        layer_norm_epsilon: 1e-5,
    };
    gcfg.validate()?;
    let init = gcfg.random_weights(cfg.seed, DType::F32)?;
    let weights = pretrain(&gcfg, init, &tokenizer, corpus, cfg)?;
    write_snapshot(dir, gcfg, &weights, &tokenizer, EOS_TOKEN)
}

fn pretrain(
    gcfg: &Gpt2Config,
    init: HashMap<String, Tensor>,
    tokenizer: &TextTokenizer,
    corpus: &[String],
    cfg: &TinyConfig,
) -> Result<HashMap<String, Tensor>> {
    if cfg.pretrain_steps == 0 || corpus.is_empty() {
        return Ok(init);
    }
    let eos = tokenizer.eos_id();
    let mut stream = vec![eos];
    for line in corpus {
        stream.extend(tokenizer.encode(line)?);
        stream.push(eos);
    }
    let window = cfg.window.min(gcfg.n_positions).min(stream.len() - 1);
    let mut vars = Vec::new();
    let mut tensors = HashMap::new();
    for (name, t) in init {
        let v = Var::from_tensor(&t)?;
        tensors.insert(name, v.as_tensor().clone());
        vars.push(v);
    }
    // the model shares storage with the vars, so optimizer steps are visible to it
    let model = Gpt2::from_tensors(gcfg.clone(), &tensors, DType::F32)?;
    let mut opt = AdamW::new(vars, ParamsAdamW { lr: cfg.learning_rate, weight_decay: 0.0, ..Default::default() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7072_6574);
    for _ in 0..cfg.pretrain_steps {
        let mut inputs = Vec::with_capacity(cfg.batch_size * window);
        let mut targets = Vec::with_capacity(cfg.batch_size * window);
        for _ in 0..cfg.batch_size {
            let start = rng.gen_range(0..stream.len() - window);
            inputs.extend_from_slice(&stream[start..start + window]);
            targets.extend_from_slice(&stream[start + 1..start + window + 1]);
        }
        let ids = Tensor::new(inputs.as_slice(), &Device::Cpu)?;
        let emb = model.wte().index_select(&ids, 0)?.reshape((cfg.batch_size, window, gcfg.n_embd))?;
        let logits = model.logits(&emb)?.reshape((cfg.batch_size * window, gcfg.vocab_size))?;
        let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
        let tgt = Tensor::new(targets.as_slice(), &Device::Cpu)?.unsqueeze(1)?;
        let loss = logp.gather(&tgt, 1)?.neg()?.mean_all()?;
        opt.backward_step(&loss)?;
    }
    let mut out = HashMap::new();
    for (name, t) in model.named_parameters() {
        out.insert(name.clone(), t.detach().copy()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_round_trips_ascii_and_knows_eos() {
        let tok = train_tokenizer(&default_corpus(), 300).unwrap();
        for text in ["make it bigger", "student", "correction:", "zebra crossing 42!"] {
            let ids = tok.encode(text).unwrap();
            assert_eq!(tok.decode(&ids).unwrap(), text);
        }
        let eos = tok.eos_id();
        assert_eq!(tok.decode(&[eos]).unwrap(), "");
    }
}
