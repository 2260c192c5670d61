//! Precomputed video-text embeddings of movement clips, read as 1-wide trajectories
//! with one step per embedding dimension.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{canonical_domain, domain_dist, EnvError, Result};
use crate::traj::{Dist, Role, Split, Task, Trajectory, MAX_LEN};

pub const MANIFEST_FILE: &str = "clips.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub file: PathBuf,
    pub activity: String,
    pub role: Role,
    /// Students only: the expert clip they are compared against.
    #[serde(default)]
    pub expert: Option<String>,
    #[serde(default)]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    #[serde(default)]
    pub source_model: Option<String>,
    pub clips: Vec<ClipEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovementClip {
    pub activity: String,
    pub dist: Dist,
    pub role: Role,
    pub trajectory: Trajectory,
    pub expert: Option<String>,
    pub split: Option<Split>,
}

/// Reads a flat vector: a JSON array, or numbers separated by commas or whitespace.
pub fn read_embedding(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|f| !f.is_empty())
        .map(|f| {
            f.parse::<f64>().map_err(|_| EnvError::Format {
                path: path.to_path_buf(),
                line: 0,
                message: format!("not a number: {f:?}"),
            })
        })
        .collect()
}

/// Turns an embedding into a `(len x 1)` trajectory.
pub fn embedding_to_trajectory(
    id: &str,
    activity: &str,
    role: Role,
    embedding: &[f64],
    source_model: Option<&str>,
) -> Result<Trajectory> {
    if embedding.len() > MAX_LEN {
        return Err(EnvError::OversizeEmbedding { id: id.to_string(), len: embedding.len() });
    }
    let steps = embedding.iter().map(|&v| vec![v]).collect();
    let mut t = Trajectory::new(id, Task::Movement, canonical_domain(activity), role, steps)?;
    if let Some(m) = source_model {
        t = t.with_meta("source_model", m);
    }
    Ok(t)
}

pub fn ingest_movement_clip(
    path: &Path,
    id: &str,
    activity: &str,
    role: Role,
    source_model: Option<&str>,
) -> Result<Trajectory> {
    embedding_to_trajectory(id, activity, role, &read_embedding(path)?, source_model)
}

/// Loads every clip listed in `<dir>/clips.json`.
pub fn load_clips(dir: &Path) -> Result<Vec<MovementClip>> {
    let manifest: ClipManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    manifest
        .clips
        .iter()
        .map(|c| {
            let activity = canonical_domain(&c.activity);
            let trajectory =
                ingest_movement_clip(&dir.join(&c.file), &c.id, &activity, c.role, manifest.source_model.as_deref())?;
            Ok(MovementClip {
                dist: domain_dist(Task::Movement, &activity)?,
                activity,
                role: c.role,
                trajectory,
                expert: c.expert.clone(),
                split: c.split,
            })
        })
        .collect()
}
