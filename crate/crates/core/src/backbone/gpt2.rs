//! GPT-2 style decoder-only transformer.
//!
//! Every op used here has a backward pass in candle, so gradients reach the input
//! embeddings. Layer norm and softmax are composed from primitives because the fused
//! kernels do not propagate gradients.

use std::collections::HashMap;

use candle_core::{DType, Device, Module, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BackboneError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gpt2Config {
    pub vocab_size: usize,
    pub n_positions: usize,
    pub n_embd: usize,
    pub n_layer: usize,
    pub n_head: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_epsilon: f64,
}

fn default_eps() -> f64 {
    1e-5
}

impl Gpt2Config {
    pub fn validate(&self) -> Result<()> {
        if self.n_head == 0 || self.n_embd % self.n_head != 0 {
            return Err(BackboneError::Manifest(format!(
                "n_embd {} is not divisible by n_head {}",
                self.n_embd, self.n_head
            )));
        }
        Ok(())
    }

    /// Parameter names and shapes in HF GPT-2 layout (Conv1D weights are `in x out`).
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.n_embd;
        let mut out = vec![
            ("wte.weight".to_string(), vec![self.vocab_size, d]),
            ("wpe.weight".to_string(), vec![self.n_positions, d]),
        ];
        for i in 0..self.n_layer {
            let p = |s: &str| format!("h.{i}.{s}");
            out.extend([
                (p("ln_1.weight"), vec![d]),
                (p("ln_1.bias"), vec![d]),
                (p("attn.c_attn.weight"), vec![d, 3 * d]),
                (p("attn.c_attn.bias"), vec![3 * d]),
                (p("attn.c_proj.weight"), vec![d, d]),
                (p("attn.c_proj.bias"), vec![d]),
                (p("ln_2.weight"), vec![d]),
                (p("ln_2.bias"), vec![d]),
                (p("mlp.c_fc.weight"), vec![d, 4 * d]),
                (p("mlp.c_fc.bias"), vec![4 * d]),
                (p("mlp.c_proj.weight"), vec![4 * d, d]),
                (p("mlp.c_proj.bias"), vec![d]),
            ]);
        }
        out.push(("ln_f.weight".to_string(), vec![d]));
        out.push(("ln_f.bias".to_string(), vec![d]));
        out
    }

    /// Seeded GPT-2 style initialization: N(0, 0.02) matrices, zero biases, unit norms.
    pub fn random_weights(&self, seed: u64, dtype: DType) -> Result<HashMap<String, Tensor>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut out = HashMap::new();
        for (name, shape) in self.parameter_shapes() {
            let n: usize = shape.iter().product();
            let values: Vec<f64> = if name.ends_with(".bias") {
                vec![0.0; n]
            } else if name.contains("ln_") {
                vec![1.0; n]
            } else {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?;
            out.insert(name, t);
        }
        Ok(out)
    }
}

pub(crate) struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

struct Conv1D {
    weight: Tensor,
    bias: Tensor,
}

impl Conv1D {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

struct Block {
    ln_1: LayerNorm,
    c_attn: Conv1D,
    attn_proj: Conv1D,
    ln_2: LayerNorm,
    c_fc: Conv1D,
    mlp_proj: Conv1D,
}

pub struct Gpt2 {
    cfg: Gpt2Config,
    wte: Tensor,
    wpe: Tensor,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    names: Vec<(String, Tensor)>,
}

impl Gpt2 {
    /// Builds the model from a name -> tensor map. Accepts an optional `transformer.` prefix.
    pub fn from_tensors(cfg: Gpt2Config, tensors: &HashMap<String, Tensor>, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let mut names = Vec::new();
        let mut get = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = tensors
                .get(name)
                .or_else(|| tensors.get(&format!("transformer.{name}")))
                .ok_or_else(|| BackboneError::Manifest(format!("missing weight {name}")))?;
            if t.dims() != shape {
                return Err(BackboneError::Manifest(format!(
                    "weight {name} has shape {:?}, expected {shape:?}",
                    t.dims()
                )));
            }
            let t = t.to_dtype(dtype)?;
            names.push((name.to_string(), t.clone()));
            Ok(t)
        };
        let shapes: HashMap<String, Vec<usize>> = cfg.parameter_shapes().into_iter().collect();
        let mut w = |n: &str| get(n, &shapes[n]);
        let eps = cfg.layer_norm_epsilon;
        let wte = w("wte.weight")?;
        let wpe = w("wpe.weight")?;
        let mut blocks = Vec::with_capacity(cfg.n_layer);
        for i in 0..cfg.n_layer {
            let mut p = |s: &str| w(&format!("h.{i}.{s}"));
            blocks.push(Block {
                ln_1: LayerNorm { weight: p("ln_1.weight")?, bias: p("ln_1.bias")?, eps },
                c_attn: Conv1D { weight: p("attn.c_attn.weight")?, bias: p("attn.c_attn.bias")? },
                attn_proj: Conv1D { weight: p("attn.c_proj.weight")?, bias: p("attn.c_proj.bias")? },
                ln_2: LayerNorm { weight: p("ln_2.weight")?, bias: p("ln_2.bias")?, eps },
                c_fc: Conv1D { weight: p("mlp.c_fc.weight")?, bias: p("mlp.c_fc.bias")? },
                mlp_proj: Conv1D { weight: p("mlp.c_proj.weight")?, bias: p("mlp.c_proj.bias")? },
            });
        }
        let ln_f = LayerNorm { weight: w("ln_f.weight")?, bias: w("ln_f.bias")?, eps };
        Ok(Self { cfg, wte, wpe, blocks, ln_f, names })
    }

    pub fn config(&self) -> &Gpt2Config {
        &self.cfg
    }

    pub fn wte(&self) -> &Tensor {
        &self.wte
    }

    pub fn named_parameters(&self) -> &[(String, Tensor)] {
        &self.names
    }

    /// `(B, L, d)` input embeddings to `(B, L, d)` final hidden states.
    pub fn hidden_states(&self, inputs: &Tensor) -> Result<Tensor> {
        let (_, len, d) = inputs.dims3()?;
        if d != self.cfg.n_embd {
            return Err(BackboneError::DimMismatch { expected: self.cfg.n_embd, got: d });
        }
        if len > self.cfg.n_positions {
            return Err(BackboneError::TooLong { len, max: self.cfg.n_positions });
        }
        let pos = self.wpe.narrow(0, 0, len)?;
        let mut x = inputs.broadcast_add(&pos)?;
        let mask = causal_mask(len, inputs.dtype())?;
        for block in &self.blocks {
            x = self.block_forward(block, &x, &mask)?;
        }
        self.ln_f.forward(&x)
    }

    pub fn logits(&self, inputs: &Tensor) -> Result<Tensor> {
        let h = self.hidden_states(inputs)?;
        Ok(h.broadcast_matmul(&self.wte.t()?)?)
    }

    fn block_forward(&self, block: &Block, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, len, d) = x.dims3()?;
        let heads = self.cfg.n_head;
        let hd = d / heads;
        let qkv = block.c_attn.forward(&block.ln_1.forward(x)?)?;
        let split = |i: usize| -> Result<Tensor> {
            Ok(qkv.narrow(D::Minus1, i * d, d)?.reshape((b, len, heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scale = 1.0 / (hd as f64).sqrt();
        let att = (q.matmul(&k.t()?.contiguous()?)? * scale)?.broadcast_add(mask)?;
        let att = candle_nn::ops::softmax(&att, D::Minus1)?;
        let y = att.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, len, d))?;
        let x = (x + block.attn_proj.forward(&y)?)?;
        let h = block.c_fc.forward(&block.ln_2.forward(&x)?)?;
        let h = candle_nn::Activation::NewGelu.forward(&h)?;
        Ok((x + block.mlp_proj.forward(&h)?)?)
    }
}

fn causal_mask(len: usize, dtype: DType) -> Result<Tensor> {
    let values: Vec<f64> = (0..len).flat_map(|i| (0..len).map(move |j| if j > i { -1e9 } else { 0.0 })).collect();
    Ok(Tensor::from_vec(values, (len, len), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Gpt2 {
        let cfg =
            Gpt2Config { vocab_size: 11, n_positions: 16, n_embd: 8, n_layer: 2, n_head: 2, layer_norm_epsilon: 1e-5 };
        let w = cfg.random_weights(1, DType::F64).unwrap();
        Gpt2::from_tensors(cfg, &w, DType::F64).unwrap()
    }

    #[test]
    fn logits_shape() {
        let m = tiny();
        let x = Tensor::randn(0f64, 1.0, (3, 5, 8), &Device::Cpu).unwrap();
        assert_eq!(m.logits(&x).unwrap().dims(), &[3, 5, 11]);
    }

    #[test]
    fn causal_prefix_is_unaffected_by_later_positions() {
        let m = tiny();
        let x = Tensor::randn(0f64, 1.0, (1, 6, 8), &Device::Cpu).unwrap();
        let full = m.logits(&x).unwrap().narrow(1, 0, 4).unwrap();
        let prefix = m.logits(&x.narrow(1, 0, 4).unwrap()).unwrap();
        let diff = (full - prefix).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn rejects_wrong_width_and_length() {
        let m = tiny();
        let x = Tensor::zeros((1, 3, 7), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(m.logits(&x), Err(BackboneError::DimMismatch { .. })));
        let x = Tensor::zeros((1, 17, 8), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(m.logits(&x), Err(BackboneError::TooLong { .. })));
    }
}
