//! Perplexity of ground-truth corrections, optionally under seeded derangements that
//! break the (student, correction) pairing.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{summarize_groups, EvalError, EvalReport, Metric, Result};
use crate::model::{CorgiModel, Example};
use crate::stats;
use crate::traj::{CorrectionSample, Dataset, Dist, Split, Task};

const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerplexityMode {
    Standard,
    /// Each sample's correction is replaced by another sample's from the same domain.
    PermuteCorrection,
    /// Each sample's student is replaced by a different student from the same domain.
    PermuteStudent,
}

impl PerplexityMode {
    pub fn label(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::PermuteCorrection => "permute_correction",
            Self::PermuteStudent => "permute_student",
        }
    }
}

impl std::str::FromStr for PerplexityMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "standard" => Ok(Self::Standard),
            "permute_correction" => Ok(Self::PermuteCorrection),
            "permute_student" => Ok(Self::PermuteStudent),
            other => Err(format!("unknown perplexity mode {other:?}")),
        }
    }
}

/// A uniformly random cyclic permutation (Sattolo's algorithm): `p[i] != i` for all `i`.
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        p.swap(i, j);
    }
    p
}

/// Per-sample NLL of the evaluated (possibly permuted) pairings.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleNll {
    pub sample_id: String,
    pub task: Task,
    pub dist: Dist,
    pub nll: f64,
}

fn domain_key<'a>(d: &'a Dataset, s: &CorrectionSample) -> (Task, &'a str) {
    let t = d.student(s);
    (t.task, t.domain.as_str())
}

/// The examples to score for `mode`, aligned with `samples`.
pub fn permuted_examples<'a>(
    d: &'a Dataset,
    samples: &[&'a CorrectionSample],
    mode: PerplexityMode,
    seed: u64,
) -> Result<Vec<Example<'a>>> {
    let mut examples: Vec<Example<'a>> = samples.iter().map(|s| Example::of(d, s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<(Task, &str), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(domain_key(d, s)).or_default().push(i);
    }
    match mode {
        PerplexityMode::Standard => {}
        PerplexityMode::PermuteCorrection => {
            for ((task, domain), idx) in &groups {
                if idx.len() < 2 {
                    return Err(EvalError::NoCandidates(format!(
                        "{} {domain}: a correction derangement needs at least 2 samples",
                        task.as_str()
                    )));
                }
                let p = derangement(idx.len(), &mut rng);
                for (k, &i) in idx.iter().enumerate() {
                    examples[i].correction = &samples[idx[p[k]]].correction;
                }
            }
        }
        PerplexityMode::PermuteStudent => {
            for ((task, domain), idx) in &groups {
                let mut students: Vec<&str> = idx.iter().map(|&i| samples[i].student_id.as_str()).collect();
                students.sort_unstable();
                students.dedup();
                if students.len() < 2 {
                    return Err(EvalError::NoCandidates(format!(
                        "{} {domain}: a student derangement needs at least 2 distinct students",
                        task.as_str()
                    )));
                }
                let p = derangement(students.len(), &mut rng);
                let remap: BTreeMap<&str, &str> =
                    students.iter().enumerate().map(|(k, &s)| (s, students[p[k]])).collect();
                for &i in idx {
                    examples[i].student = d.trajectory(remap[samples[i].student_id.as_str()]);
                }
            }
        }
    }
    Ok(examples)
}

/// Per-sample NLL over every sample of `split`.
pub fn sample_nlls(
    model: &CorgiModel,
    d: &Dataset,
    split: Split,
    mode: PerplexityMode,
    seed: u64,
) -> Result<Vec<SampleNll>> {
    let samples: Vec<&CorrectionSample> = d.split(split).collect();
    if samples.is_empty() {
        return Err(EvalError::EmptySplit(split));
    }
    let examples = permuted_examples(d, &samples, mode, seed)?;
    let nlls = model.example_losses(&examples, CHUNK)?;
    Ok(samples
        .iter()
        .zip(nlls)
        .map(|(s, nll)| SampleNll { sample_id: s.id.clone(), task: d.student(s).task, dist: s.dist, nll })
        .collect())
}

/// Perplexity reports per (task, dist) and overall.
///
/// The mean is `exp` of the mean per-sample NLL, so it equals `exp` of the trainer's
/// validation loss on the same split; the spread is the standard deviation of the
/// per-sample perplexities.
pub fn perplexity_eval(
    model: &CorgiModel,
    d: &Dataset,
    split: Split,
    mode: PerplexityMode,
    seed: u64,
    method: &str,
) -> Result<Vec<EvalReport>> {
    let nlls = sample_nlls(model, d, split, mode, seed)?;
    Ok(perplexity_reports(&nlls, method))
}

pub fn perplexity_reports(nlls: &[SampleNll], method: &str) -> Vec<EvalReport> {
    let rows: Vec<(Task, Dist, f64)> = nlls.iter().map(|s| (s.task, s.dist, s.nll)).collect();
    summarize_groups(
        &rows,
        Metric::Perplexity,
        method,
        |nll| stats::mean(nll).expect("non-empty group").exp(),
        |nll| {
            let ppl: Vec<f64> = nll.iter().map(|x| x.exp()).collect();
            stats::summarize(&ppl).expect("non-empty group").std
        },
    )
}
