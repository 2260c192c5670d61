//! Environment data: drawing strokes, movement-embedding clips and the parking task,
//! plus pair construction from a manifest.

pub mod drawing;
pub mod movement;
pub mod pairs;
pub mod steering;

use std::path::PathBuf;

use crate::traj::{Dist, Task, TrajError};

pub const DRAWING_ID: [&str; 3] = ["arabic", "burmese", "japanese"];
pub const DRAWING_OOD: [&str; 2] = ["futurama", "bengali"];
pub const MOVEMENT_ID: [&str; 3] = ["walk", "jump", "throw"];
pub const MOVEMENT_OOD: [&str; 2] = ["wave", "jumping_jacks"];
pub const STEERING_ID: [&str; 2] = ["car", "plane"];
pub const STEERING_OOD: [&str; 1] = ["bike"];

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("character {0} listed in the manifest has no stroke directory")]
    MissingCharacter(String),
    #[error("unknown {task} domain {domain:?}")]
    UnknownDomain { task: Task, domain: String },
    #[error("embedding {id} has {len} dimensions, more than 600")]
    OversizeEmbedding { id: String, len: usize },
    #[error("student {0} has no pair in the manifest")]
    UnmappedStudent(String),
    #[error("bad student spec: {0}")]
    BadSpec(String),
    #[error("invalid vehicle or scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

/// Lower-cases and joins words with underscores, so "Jumping Jacks" becomes "jumping_jacks".
pub fn canonical_domain(domain: &str) -> String {
    domain.split_whitespace().collect::<Vec<_>>().join("_").to_lowercase()
}

/// The ID/OOD tag of a domain; unlisted domains are rejected.
pub fn domain_dist(task: Task, domain: &str) -> Result<Dist> {
    let d = canonical_domain(domain);
    let (id, ood): (&[&str], &[&str]) = match task {
        Task::Drawing => (&DRAWING_ID, &DRAWING_OOD),
        Task::Movement => (&MOVEMENT_ID, &MOVEMENT_OOD),
        Task::Steering => (&STEERING_ID, &STEERING_OOD),
    };
    if id.contains(&d.as_str()) {
        Ok(Dist::InDomain)
    } else if ood.contains(&d.as_str()) {
        Ok(Dist::OutOfDomain)
    } else {
        Err(EnvError::UnknownDomain { task, domain: domain.to_string() })
    }
}
