//! Retrieval baselines: random same-domain annotation, nearest neighbor in encoder space,
//! and an annotation of a different student with the same expert.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::model::CorgiModel;
use crate::traj::{CorrectionSample, Dataset, Source, Split, Task, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    Random,
    NearestNeighbors,
    PermuteStudent,
}

impl BaselineMode {
    pub fn label(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::NearestNeighbors => "nearest_neighbors",
            Self::PermuteStudent => "permute_student",
        }
    }
}

impl std::str::FromStr for BaselineMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(Self::Random),
            "nearest_neighbors" | "nn" => Ok(Self::NearestNeighbors),
            "permute_student" => Ok(Self::PermuteStudent),
            other => Err(format!("unknown baseline {other:?}")),
        }
    }
}

fn human_train(train: &Dataset) -> impl Iterator<Item = &CorrectionSample> {
    train.split(Split::Train).filter(|s| s.source == Source::Human)
}

/// Human train annotations of the same task and domain; when the domain has none (an
/// out-of-domain query), every human train annotation of the task.
pub fn random_candidates<'a>(train: &'a Dataset, task: Task, domain: &str) -> Vec<&'a CorrectionSample> {
    let same_domain: Vec<&CorrectionSample> = human_train(train)
        .filter(|s| {
            let t = train.student(s);
            t.task == task && t.domain == domain
        })
        .collect();
    if !same_domain.is_empty() {
        return same_domain;
    }
    human_train(train).filter(|s| train.student(s).task == task).collect()
}

/// Uniform draw from [`random_candidates`].
pub fn random_baseline<'a, R: Rng + ?Sized>(
    train: &'a Dataset,
    task: Task,
    domain: &str,
    rng: &mut R,
) -> Result<&'a CorrectionSample> {
    random_candidates(train, task, domain)
        .choose(rng)
        .copied()
        .ok_or_else(|| EvalError::NoCandidates(format!("no {} train annotations", task.as_str())))
}

/// Samples from `pool` annotating a different student of the same expert.
pub fn permute_student_candidates<'a>(
    pool: &[&'a CorrectionSample],
    student_id: &str,
    expert_id: &str,
) -> Vec<&'a CorrectionSample> {
    pool.iter()
        .copied()
        .filter(|s| s.source == Source::Human && s.expert_id == expert_id && s.student_id != student_id)
        .collect()
}

pub fn permute_student_baseline<'a, R: Rng + ?Sized>(
    pool: &[&'a CorrectionSample],
    student_id: &str,
    expert_id: &str,
    rng: &mut R,
) -> Result<&'a CorrectionSample> {
    permute_student_candidates(pool, student_id, expert_id)
        .choose(rng)
        .copied()
        .ok_or_else(|| EvalError::NoCandidates(format!("no other student annotated against expert {expert_id}")))
}

#[derive(Debug, Clone)]
struct NnEntry {
    student_id: String,
    task: Task,
    /// Lowest sample id among the student's annotations; the tie-break key.
    first_sample_id: String,
    encoding: Vec<f64>,
    /// Indices into the train dataset's samples, sorted by sample id.
    annotations: Vec<usize>,
}

/// Encoder outputs of every human-annotated train student.
#[derive(Debug, Clone)]
pub struct NnIndex {
    entries: Vec<NnEntry>,
}

fn flatten(model: &CorgiModel, t: &Trajectory) -> Result<Vec<f64>> {
    Ok(model.encode_one(t)?.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?)
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

impl NnIndex {
    pub fn build(model: &CorgiModel, train: &Dataset) -> Result<Self> {
        let mut by_student: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in train.samples.iter().enumerate() {
            if s.split == Split::Train && s.source == Source::Human {
                by_student.entry(&s.student_id).or_default().push(i);
            }
        }
        if by_student.is_empty() {
            return Err(EvalError::EmptyTrain);
        }
        let mut entries = Vec::with_capacity(by_student.len());
        for (student_id, mut annotations) in by_student {
            annotations.sort_by(|&a, &b| train.samples[a].id.cmp(&train.samples[b].id));
            let t = train.trajectory(student_id);
            entries.push(NnEntry {
                student_id: student_id.to_string(),
                task: t.task,
                first_sample_id: train.samples[annotations[0]].id.clone(),
                encoding: flatten(model, t)?,
                annotations,
            });
        }
        Ok(Self { entries })
    }

    /// The train student of the same task closest in encoder output, with its distance.
    pub fn nearest(&self, model: &CorgiModel, query: &Trajectory) -> Result<(&str, f64)> {
        let q = flatten(model, query)?;
        self.entries
            .iter()
            .filter(|e| e.task == query.task)
            .map(|e| (e, mse(&q, &e.encoding)))
            .min_by(|(a, da), (b, db)| da.total_cmp(db).then_with(|| a.first_sample_id.cmp(&b.first_sample_id)))
            .map(|(e, dist)| (e.student_id.as_str(), dist))
            .ok_or(EvalError::EmptyTrain)
    }

    /// A uniformly drawn annotation of the nearest train student.
    pub fn lookup<'a, R: Rng + ?Sized>(
        &self,
        model: &CorgiModel,
        query: &Trajectory,
        train: &'a Dataset,
        rng: &mut R,
    ) -> Result<&'a CorrectionSample> {
        let (student, _) = self.nearest(model, query)?;
        let entry = self.entries.iter().find(|e| e.student_id == student).expect("entry exists");
        let idx = *entry.annotations.choose(rng).expect("every entry has an annotation");
        Ok(&train.samples[idx])
    }
}

/// Convenience wrapper building the index on the fly.
pub fn nn_lookup<'a, R: Rng + ?Sized>(
    model: &CorgiModel,
    query: &Trajectory,
    train: &'a Dataset,
    rng: &mut R,
) -> Result<&'a CorrectionSample> {
    NnIndex::build(model, train)?.lookup(model, query, train, rng)
}
