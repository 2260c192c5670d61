//! Pair construction: each student joined with its expert, tagged ID/OOD, then joined
//! with human annotations into a dataset.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::drawing::DrawingStimulus;
use super::movement::MovementClip;
use super::{domain_dist, EnvError, Result};
use crate::traj::{CorrectionSample, Dataset, Dist, Role, Source, Split, Task, Trajectory};

/// One manifest row: which expert a student is compared against, and its split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRow {
    pub student_id: String,
    pub expert_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSkeleton {
    pub student_id: String,
    pub expert_id: String,
    pub task: Task,
    pub domain: String,
    pub split: Split,
    pub dist: Dist,
}

/// A human correction for one student.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub student_id: String,
    pub correction: String,
}

pub fn drawing_rows(stimuli: &[DrawingStimulus]) -> Vec<PairRow> {
    stimuli
        .iter()
        .flat_map(|s| {
            s.students.iter().map(|st| PairRow {
                student_id: st.trajectory.id.clone(),
                expert_id: s.expert.id.clone(),
                split: st.split,
            })
        })
        .collect()
}

/// Rows for student clips that name their expert and split.
pub fn movement_rows(clips: &[MovementClip]) -> Result<Vec<PairRow>> {
    clips
        .iter()
        .filter(|c| c.role == Role::Student)
        .map(|c| match (&c.expert, c.split) {
            (Some(e), Some(split)) => Ok(PairRow { student_id: c.trajectory.id.clone(), expert_id: e.clone(), split }),
            _ => Err(EnvError::UnmappedStudent(c.trajectory.id.clone())),
        })
        .collect()
}

/// Joins every student trajectory with its manifest row.
///
/// Each student must have exactly one row, and the row's expert must share its task and domain.
pub fn make_pairs(trajectories: &[Trajectory], rows: &[PairRow]) -> Result<Vec<PairSkeleton>> {
    let by_id: BTreeMap<&str, &Trajectory> = trajectories.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let bad = |m: String| EnvError::BadSpec(format!("pair {} / {}: {m}", row.student_id, row.expert_id));
        let s = by_id.get(row.student_id.as_str()).ok_or_else(|| bad("unknown student".into()))?;
        let e = by_id.get(row.expert_id.as_str()).ok_or_else(|| bad("unknown expert".into()))?;
        if s.role != Role::Student || e.role != Role::Expert {
            return Err(bad("roles must be student then expert".into()));
        }
        if s.task != e.task || s.domain != e.domain {
            return Err(bad("student and expert differ in task or domain".into()));
        }
        if !seen.insert(row.student_id.as_str()) {
            return Err(bad("student listed twice".into()));
        }
        out.push(PairSkeleton {
            student_id: row.student_id.clone(),
            expert_id: row.expert_id.clone(),
            task: s.task,
            domain: s.domain.clone(),
            split: row.split,
            dist: domain_dist(s.task, &s.domain)?,
        });
    }
    if let Some(t) = trajectories.iter().find(|t| t.role == Role::Student && !seen.contains(t.id.as_str())) {
        return Err(EnvError::UnmappedStudent(t.id.clone()));
    }
    Ok(out)
}

/// Builds the human dataset. Sample ids are `{student_id}-a{k}`, numbered per student in
/// annotation order.
pub fn attach_corrections(
    pairs: &[PairSkeleton],
    trajectories: Vec<Trajectory>,
    annotations: &[Annotation],
) -> Result<Dataset> {
    let by_student: BTreeMap<&str, &PairSkeleton> = pairs.iter().map(|p| (p.student_id.as_str(), p)).collect();
    let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
    let mut samples = Vec::with_capacity(annotations.len());
    for a in annotations {
        let p = by_student.get(a.student_id.as_str()).ok_or_else(|| EnvError::UnmappedStudent(a.student_id.clone()))?;
        let k = counters.entry(&a.student_id).or_insert(0);
        *k += 1;
        samples.push(CorrectionSample {
            id: format!("{}-a{k}", a.student_id),
            student_id: p.student_id.clone(),
            expert_id: p.expert_id.clone(),
            correction: a.correction.trim().to_string(),
            split: p.split,
            dist: p.dist,
            source: Source::Human,
            parent_id: None,
        });
    }
    Ok(Dataset::new(samples, trajectories)?)
}
