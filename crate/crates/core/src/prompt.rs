//! Prompt assembly: scaffold word embeddings stitched around the two soft prompts.
//!
//! Layout: `student <enc_s> expert <enc_e> correction: <u>`. In training mode the loss
//! mask covers the correction tokens; in generation mode the sequence stops after the
//! `correction:` marker and carries no mask.

use std::ops::Range;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::backbone::{embed_tokens, BackboneError, CausalLm, Result};

pub const STUDENT_WORD: &str = "student";
pub const EXPERT_WORD: &str = "expert";
pub const CORRECTION_MARKER: &str = "correction:";

/// Which positions contribute to the language-modeling loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    /// Only the correction tokens.
    #[default]
    CorrectionOnly,
    /// Correction tokens plus every scaffold token after the first position.
    WithScaffold,
}

/// Where each segment sits inside an assembled prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLayout {
    pub student_word: Range<usize>,
    pub student_traj: Range<usize>,
    pub expert_word: Range<usize>,
    pub expert_traj: Range<usize>,
    pub marker: Range<usize>,
    pub correction: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct PromptSequence {
    embeddings: Tensor,
    loss_mask: Option<Vec<bool>>,
    target_ids: Vec<u32>,
    layout: Option<PromptLayout>,
}

impl PromptSequence {
    /// Raw constructor; `target_ids` lists one id per `true` mask entry, in order.
    pub fn from_parts(embeddings: Tensor, loss_mask: Option<Vec<bool>>, target_ids: Vec<u32>) -> Self {
        Self { embeddings, loss_mask, target_ids, layout: None }
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn loss_mask(&self) -> Option<&[bool]> {
        self.loss_mask.as_deref()
    }

    pub fn target_ids(&self) -> &[u32] {
        &self.target_ids
    }

    pub fn layout(&self) -> Option<&PromptLayout> {
        self.layout.as_ref()
    }

    pub fn len(&self) -> usize {
        self.embeddings.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn masked_count(&self) -> usize {
        self.loss_mask.as_ref().map_or(0, |m| m.iter().filter(|&&b| b).count())
    }
}

/// Token ids and embeddings of the three scaffold words, computed once per backbone.
#[derive(Debug, Clone)]
pub struct Scaffold {
    student: (Vec<u32>, Tensor),
    expert: (Vec<u32>, Tensor),
    marker: (Vec<u32>, Tensor),
}

impl Scaffold {
    pub fn new(lm: &dyn CausalLm) -> Result<Self> {
        Ok(Self {
            student: embed_tokens(lm, STUDENT_WORD)?,
            expert: embed_tokens(lm, EXPERT_WORD)?,
            marker: embed_tokens(lm, CORRECTION_MARKER)?,
        })
    }

    pub fn token_counts(&self) -> (usize, usize, usize) {
        (self.student.0.len(), self.expert.0.len(), self.marker.0.len())
    }
}

/// Stitches `[student, enc_s, expert, enc_e, correction:, u]`.
///
/// `correction` is `(token ids, their embeddings)`; `None` yields a generation prefix.
pub fn assemble_prompt(
    scaffold: &Scaffold,
    enc_s: &Tensor,
    enc_e: &Tensor,
    correction: Option<(&[u32], &Tensor)>,
    scope: LossScope,
) -> Result<PromptSequence> {
    let (n, d) = enc_s.dims2()?;
    let (n_e, d_e) = enc_e.dims2()?;
    if n_e != n {
        return Err(BackboneError::DimMismatch { expected: n, got: n_e });
    }
    let d_word = scaffold.student.1.dims2()?.1;
    for got in [d, d_e] {
        if got != d_word {
            return Err(BackboneError::DimMismatch { expected: d_word, got });
        }
    }
    let (ns, ne, nm) = scaffold.token_counts();
    let mut cursor = 0;
    let mut take = |len: usize| {
        let r = cursor..cursor + len;
        cursor += len;
        r
    };
    let student_word = take(ns);
    let student_traj = take(n);
    let expert_word = take(ne);
    let expert_traj = take(n);
    let marker = take(nm);
    let corr_len = correction.map_or(0, |(ids, _)| ids.len());
    let correction_range = take(corr_len);

    let mut parts = vec![&scaffold.student.1, enc_s, &scaffold.expert.1, enc_e, &scaffold.marker.1];
    let (mask, targets) = match correction {
        None => (None, Vec::new()),
        Some((ids, emb)) => {
            if ids.is_empty() {
                return Err(BackboneError::EmptyText);
            }
            let (rows, width) = emb.dims2()?;
            if rows != ids.len() || width != d_word {
                return Err(BackboneError::DimMismatch { expected: d_word, got: width });
            }
            parts.push(emb);
            let total = correction_range.end;
            let mut mask = vec![false; total];
            let mut targets = Vec::new();
            if scope == LossScope::WithScaffold {
                let scaffold_tokens = [
                    (&student_word, &scaffold.student.0),
                    (&expert_word, &scaffold.expert.0),
                    (&marker, &scaffold.marker.0),
                ];
                for (range, ids) in scaffold_tokens {
                    for (pos, &id) in range.clone().zip(ids) {
                        if pos > 0 {
                            mask[pos] = true;
                            targets.push((pos, id));
                        }
                    }
                }
            }
            for (pos, &id) in correction_range.clone().zip(ids) {
                mask[pos] = true;
                targets.push((pos, id));
            }
            targets.sort_by_key(|&(p, _)| p);
            (Some(mask), targets.into_iter().map(|(_, id)| id).collect())
        }
    };
    let embeddings = Tensor::cat(&parts, 0)?;
    Ok(PromptSequence {
        embeddings,
        loss_mask: mask,
        target_ids: targets,
        layout: Some(PromptLayout {
            student_word,
            student_traj,
            expert_word,
            expert_traj,
            marker,
            correction: correction_range,
        }),
    })
}
