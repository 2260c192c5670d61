//! Three-option forced-choice preference records.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{CoachError, Result};

pub const OPTIONS: usize = 3;
pub const PROMPT: &str = "Which feedback do you think is most helpful to provide to the student?";

/// One candidate correction with the method that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcedOption {
    pub source: String,
    pub text: String,
}

/// A pair to be rated and its candidates in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceItem {
    pub pair_id: String,
    pub stimulus_id: Option<String>,
    pub candidates: [SourcedOption; OPTIONS],
}

/// What a rater sees: shuffled texts, no sources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePrompt {
    pub pair_id: String,
    pub prompt: String,
    pub options: [String; OPTIONS],
    /// `permutation[i]` is the canonical index shown in slot `i`.
    pub permutation: [usize; OPTIONS],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub pair_id: String,
    pub options: [String; OPTIONS],
    pub option_sources: [String; OPTIONS],
    pub permutation: [usize; OPTIONS],
    /// Slot the rater picked.
    pub choice: usize,
    pub rater_id: String,
}

/// A rater's answer to a [`PreferencePrompt`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceSubmission {
    pub pair_id: String,
    pub rater_id: String,
    pub permutation: [usize; OPTIONS],
    pub choice: usize,
}

fn is_permutation(p: &[usize; OPTIONS]) -> bool {
    let mut seen = [false; OPTIONS];
    p.iter().all(|&i| i < OPTIONS && !std::mem::replace(&mut seen[i], true))
}

impl PreferenceItem {
    pub fn prompt<R: Rng + ?Sized>(&self, rng: &mut R) -> PreferencePrompt {
        let mut permutation = [0, 1, 2];
        permutation.shuffle(rng);
        PreferencePrompt {
            pair_id: self.pair_id.clone(),
            prompt: PROMPT.to_string(),
            options: permutation.map(|i| self.candidates[i].text.clone()),
            permutation,
        }
    }

    /// Resolves a submission against this item's candidates.
    pub fn record(&self, sub: &PreferenceSubmission) -> Result<PreferenceRecord> {
        if sub.pair_id != self.pair_id {
            return Err(CoachError::Validation(format!("submission is for {}, not {}", sub.pair_id, self.pair_id)));
        }
        if !is_permutation(&sub.permutation) {
            return Err(CoachError::Validation(format!("{:?} is not a permutation", sub.permutation)));
        }
        let rec = PreferenceRecord {
            pair_id: sub.pair_id.clone(),
            options: sub.permutation.map(|i| self.candidates[i].text.clone()),
            option_sources: sub.permutation.map(|i| self.candidates[i].source.clone()),
            permutation: sub.permutation,
            choice: sub.choice,
            rater_id: sub.rater_id.clone(),
        };
        rec.validate()?;
        Ok(rec)
    }
}

impl PreferenceRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoachError::Validation(format!("preference for {}: {m}", self.pair_id)));
        if self.choice >= OPTIONS {
            return bad(format!("choice {} out of range", self.choice));
        }
        if !is_permutation(&self.permutation) {
            return bad(format!("{:?} is not a permutation", self.permutation));
        }
        if self.options.iter().any(|o| o.trim().is_empty()) {
            return bad("empty option".into());
        }
        if self.pair_id.is_empty() || self.rater_id.is_empty() {
            return bad("pair_id and rater_id are required".into());
        }
        Ok(())
    }

    pub fn chosen_source(&self) -> &str {
        &self.option_sources[self.choice]
    }
}

/// Fraction of records whose chosen option came from each source.
pub fn preference_rates<'a>(records: impl IntoIterator<Item = &'a PreferenceRecord>) -> BTreeMap<String, f64> {
    let mut offered: BTreeMap<String, usize> = BTreeMap::new();
    let mut chosen: BTreeMap<String, usize> = BTreeMap::new();
    let mut n = 0usize;
    for r in records {
        n += 1;
        for s in &r.option_sources {
            offered.entry(s.clone()).or_default();
        }
        *chosen.entry(r.chosen_source().to_string()).or_default() += 1;
    }
    offered
        .into_keys()
        .map(|s| {
            let c = chosen.get(&s).copied().unwrap_or(0);
            (s, c as f64 / n as f64)
        })
        .collect()
}
