//! The encoder + frozen backbone pair used for training, scoring and generation.

use candle_core::{DType, Tensor, D};

use crate::backbone::{batch_correction_losses, generate_correction, Generation, GenerationConfig, SharedLm};
use crate::encoder::TrajectoryEncoder;
use crate::prompt::{assemble_prompt, LossScope, PromptSequence, Scaffold};
use crate::traj::{CorrectionSample, Dataset, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Backbone(#[from] crate::backbone::BackboneError),
    #[error(transparent)]
    Encoder(#[from] crate::encoder::EncoderError),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// One (student, expert, correction) triple to score.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub student: &'a Trajectory,
    pub expert: &'a Trajectory,
    pub correction: &'a str,
}

impl<'a> Example<'a> {
    pub fn of(d: &'a Dataset, s: &'a CorrectionSample) -> Self {
        Self { student: d.student(s), expert: d.expert(s), correction: &s.correction }
    }
}

pub struct CorgiModel {
    lm: SharedLm,
    encoder: TrajectoryEncoder,
    scaffold: Scaffold,
    scope: LossScope,
    append_eos: bool,
}

impl CorgiModel {
    pub fn new(lm: SharedLm, encoder: TrajectoryEncoder, scope: LossScope, append_eos: bool) -> Result<Self> {
        encoder.config().validate(lm.spec().embed_dim)?;
        let scaffold = Scaffold::new(lm.as_ref())?;
        Ok(Self { lm, encoder, scaffold, scope, append_eos })
    }

    pub fn lm(&self) -> &SharedLm {
        &self.lm
    }

    pub fn encoder(&self) -> &TrajectoryEncoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut TrajectoryEncoder {
        &mut self.encoder
    }

    pub fn into_encoder(self) -> TrajectoryEncoder {
        self.encoder
    }

    pub fn scaffold(&self) -> &Scaffold {
        &self.scaffold
    }

    /// Token ids the loss is computed against: the correction, optionally followed by
    /// the end-of-text token so generation learns where to stop.
    pub fn target_ids(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = self.lm.tokenizer().encode(text)?;
        if ids.is_empty() {
            return Err(crate::backbone::BackboneError::EmptyText.into());
        }
        if self.append_eos {
            ids.push(self.lm.spec().eos_id);
        }
        Ok(ids)
    }

    /// Training-mode prompts; student and expert trajectories are encoded in one pass.
    pub fn prompts(&self, examples: &[Example<'_>]) -> Result<Vec<PromptSequence>> {
        let b = examples.len();
        let mut trajs: Vec<&Trajectory> = examples.iter().map(|e| e.student).collect();
        trajs.extend(examples.iter().map(|e| e.expert));
        let encoded = self.encoder.encode(&trajs)?;
        examples
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let ids = self.target_ids(e.correction)?;
                let emb = self.lm.token_embeddings(&ids)?;
                let enc_s = encoded.get(i)?;
                let enc_e = encoded.get(b + i)?;
                Ok(assemble_prompt(&self.scaffold, &enc_s, &enc_e, Some((&ids, &emb)), self.scope)?)
            })
            .collect()
    }

    /// Per-example mean NLL, `(B,)`, differentiable w.r.t. encoder params.
    pub fn batch_losses(&self, examples: &[Example<'_>]) -> Result<Tensor> {
        let prompts = self.prompts(examples)?;
        Ok(batch_correction_losses(self.lm.as_ref(), &prompts)?)
    }

    /// Per-example losses as plain numbers, evaluated in chunks.
    pub fn example_losses(&self, examples: &[Example<'_>], chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(examples.len());
        for batch in examples.chunks(chunk.max(1)) {
            let losses = self.batch_losses(batch)?.detach();
            out.extend(losses.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        }
        Ok(out)
    }

    pub fn sample_losses(&self, d: &Dataset, samples: &[&CorrectionSample], chunk: usize) -> Result<Vec<f64>> {
        let examples: Vec<Example<'_>> = samples.iter().map(|s| Example::of(d, s)).collect();
        self.example_losses(&examples, chunk)
    }

    /// Generation-mode prefix for a (student, expert) pair.
    pub fn generation_prefix(&self, student: &Trajectory, expert: &Trajectory) -> Result<PromptSequence> {
        let encoded = self.encoder.encode(&[student, expert])?;
        Ok(assemble_prompt(&self.scaffold, &encoded.get(0)?, &encoded.get(1)?, None, self.scope)?)
    }

    pub fn generate(&self, student: &Trajectory, expert: &Trajectory, cfg: &GenerationConfig) -> Result<Generation> {
        let prefix = self.generation_prefix(student, expert)?;
        Ok(generate_correction(self.lm.as_ref(), &prefix, cfg)?)
    }

    /// Soft prompts for one trajectory, `(n_tokens, embed_dim)`.
    pub fn encode_one(&self, t: &Trajectory) -> Result<Tensor> {
        Ok(self.encoder.encode_one(t)?)
    }

    /// Mean squared difference between two trajectories' encoder outputs.
    pub fn encoding_mse(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        let diff = (a - b)?.sqr()?.flatten_all()?;
        Ok(diff.mean(D::Minus1)?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }
}
