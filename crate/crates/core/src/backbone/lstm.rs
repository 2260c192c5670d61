//! 3-layer LSTM language model over a frozen, pretrained token-embedding table.
//!
//! Hidden size equals the embedding width and the output head is tied to the
//! embedding table, so the recurrent layers are the only randomly initialized part.

use candle_core::{DType, Device, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::{BackboneError, Result};

pub const LSTM_LAYERS: usize = 3;

struct LstmLayer {
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
}

pub struct LstmLm {
    embed: Tensor,
    hidden: usize,
    layers: Vec<LstmLayer>,
    names: Vec<(String, Tensor)>,
}

impl LstmLm {
    /// Initializes recurrent weights uniformly in `+-1/sqrt(hidden)` from `seed`.
    pub fn new(embed: Tensor, seed: u64, dtype: DType) -> Result<Self> {
        let (_, hidden) = embed.dims2()?;
        let embed = embed.to_dtype(dtype)?;
        let bound = 1.0 / (hidden as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shape: (usize, usize)| -> Result<Tensor> {
            let v: Vec<f64> = (0..shape.0 * shape.1).map(|_| dist.sample(&mut rng)).collect();
            Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
        };
        let mut layers = Vec::new();
        let mut names = vec![("embed.weight".to_string(), embed.clone())];
        for l in 0..LSTM_LAYERS {
            let layer = LstmLayer {
                w_ih: draw((4 * hidden, hidden))?,
                w_hh: draw((4 * hidden, hidden))?,
                bias: draw((1, 4 * hidden))?.squeeze(0)?,
            };
            names.push((format!("lstm.{l}.w_ih"), layer.w_ih.clone()));
            names.push((format!("lstm.{l}.w_hh"), layer.w_hh.clone()));
            names.push((format!("lstm.{l}.bias"), layer.bias.clone()));
            layers.push(layer);
        }
        Ok(Self { embed, hidden, layers, names })
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embed
    }

    pub fn named_parameters(&self) -> &[(String, Tensor)] {
        &self.names
    }

    pub fn hidden_states(&self, inputs: &Tensor) -> Result<Tensor> {
        let (b, len, d) = inputs.dims3()?;
        if d != self.hidden {
            return Err(BackboneError::DimMismatch { expected: self.hidden, got: d });
        }
        let mut seq = inputs.clone();
        for layer in &self.layers {
            let w_ih_t = layer.w_ih.t()?;
            let w_hh_t = layer.w_hh.t()?;
            // input projections for all timesteps at once: (B, L, 4h)
            let projected = seq.broadcast_matmul(&w_ih_t)?.broadcast_add(&layer.bias)?;
            let mut h = Tensor::zeros((b, self.hidden), inputs.dtype(), inputs.device())?;
            let mut c = h.clone();
            let mut outputs = Vec::with_capacity(len);
            for t in 0..len {
                let gates = (projected.narrow(1, t, 1)?.squeeze(1)? + h.matmul(&w_hh_t)?)?;
                let chunk = |i: usize| gates.narrow(D::Minus1, i * self.hidden, self.hidden);
                let i_g = candle_nn::ops::sigmoid(&chunk(0)?)?;
                let f_g = candle_nn::ops::sigmoid(&chunk(1)?)?;
                let g_g = chunk(2)?.tanh()?;
                let o_g = candle_nn::ops::sigmoid(&chunk(3)?)?;
                c = ((f_g * &c)? + (i_g * g_g)?)?;
                h = (o_g * c.tanh()?)?;
                outputs.push(h.unsqueeze(1)?);
            }
            seq = Tensor::cat(&outputs, 1)?;
        }
        Ok(seq)
    }

    pub fn logits(&self, inputs: &Tensor) -> Result<Tensor> {
        Ok(self.hidden_states(inputs)?.broadcast_matmul(&self.embed.t()?)?)
    }
}
