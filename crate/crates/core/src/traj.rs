//! Trajectory and correction data model, padding/resampling, dataset IO and splitting.
//!
//! Feature layouts per task:
//! - drawing: `[x, y]` pen positions on the unit canvas (actions only)
//! - steering: `[x, y, vx, vy, cos_h, sin_h, accel, steer]`
//! - movement: `[e]`, one embedding coordinate per timestep
//!
//! Values are stored raw. Any normalization lives with the encoder.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Maximum number of timesteps a trajectory may have before padding.
pub const MAX_LEN: usize = 600;
/// Maximum per-step feature width.
pub const MAX_WIDTH: usize = 10;

pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const CORRECTIONS_FILE: &str = "corrections.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum TrajError {
    #[error("trajectory {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("trajectory {id} is {len}x{width}, exceeds {MAX_LEN}x{MAX_WIDTH}; resample first")]
    OversizeTrajectory { id: String, len: usize, width: usize },
    #[error("trajectory {0} has fewer than 2 steps")]
    DegenerateTrajectory(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}:{line}: schema error: {message}")]
    SchemaError { path: PathBuf, line: usize, message: String },
    #[error("dangling trajectory references: {0:?}")]
    DanglingRef(Vec<String>),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("split {0} would receive zero samples")]
    EmptySplit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TrajError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Drawing,
    Steering,
    Movement,
}

impl Task {
    /// Per-step feature width used by this task.
    pub fn width(self) -> usize {
        match self {
            Task::Drawing => 2,
            Task::Steering => 8,
            Task::Movement => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Drawing => "drawing",
            Task::Steering => "steering",
            Task::Movement => "movement",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Student,
    Expert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = TrajError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(TrajError::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dist {
    #[serde(rename = "ID")]
    InDomain,
    #[serde(rename = "OOD")]
    OutOfDomain,
}

impl Dist {
    pub fn as_str(self) -> &'static str {
        match self {
            Dist::InDomain => "ID",
            Dist::OutOfDomain => "OOD",
        }
    }
}

impl std::fmt::Display for Dist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Paraphrase,
}

/// A `(T x d_g)` sequence of concatenated state-action vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub task: Task,
    pub domain: String,
    pub role: Role,
    pub steps: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Trajectory {
    pub fn new(
        id: impl Into<String>,
        task: Task,
        domain: impl Into<String>,
        role: Role,
        steps: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let t = Self { id: id.into(), task, domain: domain.into(), role, steps, meta: BTreeMap::new() };
        t.validate()?;
        Ok(t)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn width(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| TrajError::Invalid { id: self.id.clone(), reason };
        if self.steps.is_empty() {
            return Err(invalid("trajectory has no steps".into()));
        }
        let width = self.width();
        if width == 0 {
            return Err(invalid("steps have zero width".into()));
        }
        if width > MAX_WIDTH {
            return Err(invalid(format!("width {width} exceeds {MAX_WIDTH}")));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.len() != width {
                return Err(invalid(format!("step {i} has width {}, expected {width}", step.len())));
            }
            if step.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("step {i} contains a non-finite value")));
            }
        }
        Ok(())
    }
}

/// A trajectory zero-padded into a fixed `MAX_LEN x MAX_WIDTH` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedTrajectory {
    data: Vec<f64>,
    valid_length: usize,
    valid_width: usize,
}

impl PaddedTrajectory {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn valid_length(&self) -> usize {
        self.valid_length
    }

    pub fn valid_width(&self) -> usize {
        self.valid_width
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * MAX_WIDTH + col]
    }

    /// Extracts the `valid_length x valid_width` block.
    pub fn unpad(&self) -> Vec<Vec<f64>> {
        (0..self.valid_length).map(|r| self.data[r * MAX_WIDTH..r * MAX_WIDTH + self.valid_width].to_vec()).collect()
    }
}

pub fn pad_trajectory(t: &Trajectory) -> Result<PaddedTrajectory> {
    t.validate()?;
    let (len, width) = (t.len(), t.width());
    if len > MAX_LEN || width > MAX_WIDTH {
        return Err(TrajError::OversizeTrajectory { id: t.id.clone(), len, width });
    }
    let mut data = vec![0.0; MAX_LEN * MAX_WIDTH];
    for (r, step) in t.steps.iter().enumerate() {
        data[r * MAX_WIDTH..r * MAX_WIDTH + width].copy_from_slice(step);
    }
    Ok(PaddedTrajectory { data, valid_length: len, valid_width: width })
}

/// Linear interpolation at `target_len` uniformly spaced fractional indices.
/// Endpoints are copied, not interpolated.
pub fn resample_uniform(t: &Trajectory, target_len: usize) -> Result<Trajectory> {
    if target_len < 2 {
        return Err(TrajError::InvalidArgument(format!("target_len must be >= 2, got {target_len}")));
    }
    if t.len() < 2 {
        return Err(TrajError::DegenerateTrajectory(t.id.clone()));
    }
    if target_len == t.len() {
        return Ok(t.clone());
    }
    let last = t.len() - 1;
    let scale = last as f64 / (target_len - 1) as f64;
    let mut steps = Vec::with_capacity(target_len);
    for i in 0..target_len {
        if i == 0 {
            steps.push(t.steps[0].clone());
            continue;
        }
        if i == target_len - 1 {
            steps.push(t.steps[last].clone());
            continue;
        }
        let pos = i as f64 * scale;
        let lo = (pos.floor() as usize).min(last - 1);
        let frac = pos - lo as f64;
        let (a, b) = (&t.steps[lo], &t.steps[lo + 1]);
        steps.push(a.iter().zip(b).map(|(&x, &y)| x + (y - x) * frac).collect());
    }
    Ok(Trajectory { steps, ..t.clone() })
}

/// One `(student, expert, correction)` annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSample {
    pub id: String,
    pub student_id: String,
    pub expert_id: String,
    pub correction: String,
    pub split: Split,
    pub dist: Dist,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
}

impl CorrectionSample {
    pub fn pair_key(&self) -> (&str, &str) {
        (&self.student_id, &self.expert_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<CorrectionSample>,
    pub trajectories: BTreeMap<String, Trajectory>,
}

impl Dataset {
    /// Builds a dataset and checks every invariant.
    pub fn new(samples: Vec<CorrectionSample>, trajectories: Vec<Trajectory>) -> Result<Self> {
        let mut store = BTreeMap::new();
        for t in trajectories {
            t.validate()?;
            let id = t.id.clone();
            if store.insert(id.clone(), t).is_some() {
                return Err(TrajError::InvalidDataset(format!("duplicate trajectory id {id}")));
            }
        }
        let d = Self { samples, trajectories: store };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let mut missing = Vec::new();
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(TrajError::InvalidDataset(format!("duplicate sample id {}", s.id)));
            }
            if s.correction.trim().is_empty() {
                return Err(TrajError::InvalidDataset(format!("sample {} has an empty correction", s.id)));
            }
            if s.parent_id.is_some() != (s.source == Source::Paraphrase) {
                return Err(TrajError::InvalidDataset(format!(
                    "sample {}: parent_id must be set exactly when source is paraphrase",
                    s.id
                )));
            }
            for r in [&s.student_id, &s.expert_id] {
                if !self.trajectories.contains_key(r) && !missing.contains(r) {
                    missing.push(r.clone());
                }
            }
        }
        if !missing.is_empty() {
            return Err(TrajError::DanglingRef(missing));
        }
        for s in &self.samples {
            let (st, ex) = (&self.trajectories[&s.student_id], &self.trajectories[&s.expert_id]);
            if st.task != ex.task || st.domain != ex.domain {
                return Err(TrajError::InvalidDataset(format!(
                    "sample {}: student and expert differ in task/domain",
                    s.id
                )));
            }
        }
        Ok(())
    }

    pub fn trajectory(&self, id: &str) -> &Trajectory {
        &self.trajectories[id]
    }

    pub fn student(&self, s: &CorrectionSample) -> &Trajectory {
        &self.trajectories[&s.student_id]
    }

    pub fn expert(&self, s: &CorrectionSample) -> &Trajectory {
        &self.trajectories[&s.expert_id]
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorrectionSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// A copy containing only the samples accepted by `keep` (trajectory store unchanged).
    pub fn filtered(&self, keep: impl Fn(&CorrectionSample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            trajectories: self.trajectories.clone(),
        }
    }

    /// SHA-256 over the canonical serialization of both record files.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        let (traj, corr) = self.to_jsonl();
        h.update(traj.as_bytes());
        h.update(b"\n--\n");
        h.update(corr.as_bytes());
        hex::encode(h.finalize())
    }

    /// Serializes trajectories (sorted by id) and corrections (record order).
    pub fn to_jsonl(&self) -> (String, String) {
        let mut traj = String::new();
        for t in self.trajectories.values() {
            traj.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
            traj.push('\n');
        }
        let mut corr = String::new();
        for s in &self.samples {
            corr.push_str(&serde_json::to_string(s).expect("sample serializes"));
            corr.push('\n');
        }
        (traj, corr)
    }
}

/// Reads line-delimited JSON records, reporting the 1-based line of any schema error.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| TrajError::SchemaError {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset directory holding `trajectories.jsonl` and `corrections.jsonl`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let trajectories: Vec<Trajectory> = read_jsonl(&dir.join(TRAJECTORIES_FILE))?;
    let corrections_path = dir.join(CORRECTIONS_FILE);
    let samples: Vec<CorrectionSample> = read_jsonl(&corrections_path)?;
    for (i, s) in samples.iter().enumerate() {
        if s.correction.trim().is_empty() {
            return Err(TrajError::SchemaError {
                path: corrections_path.clone(),
                line: i + 1,
                message: "correction must be non-empty".into(),
            });
        }
    }
    Dataset::new(samples, trajectories)
}

pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(TRAJECTORIES_FILE), d.trajectories.values())?;
    write_jsonl(&dir.join(CORRECTIONS_FILE), &d.samples)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64) -> Result<Self> {
        if !(train >= 0.0 && valid >= 0.0) || (train + valid - 1.0).abs() > 1e-9 {
            return Err(TrajError::InvalidArgument(format!(
                "split ratios must be non-negative and sum to 1, got ({train}, {valid})"
            )));
        }
        Ok(Self { train, valid })
    }
}

/// Re-splits the current train samples into train/valid.
///
/// Samples are grouped by `(student, expert)` pair so that annotations of one pair
/// never straddle the boundary. Exactly `round(valid * n_groups)` groups go to valid.
pub fn split_dataset(d: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Dataset> {
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, s) in d.samples.iter().enumerate() {
        if s.split == Split::Train {
            groups.entry((s.student_id.clone(), s.expert_id.clone())).or_default().push(i);
        }
    }
    let mut keys: Vec<_> = groups.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);
    let n_valid = (ratios.valid * keys.len() as f64).round() as usize;
    if n_valid == 0 {
        return Err(TrajError::EmptySplit("valid".into()));
    }
    if n_valid == keys.len() {
        return Err(TrajError::EmptySplit("train".into()));
    }
    let mut out = d.clone();
    for key in &keys[..n_valid] {
        for &i in &groups[key] {
            out.samples[i].split = Split::Valid;
        }
    }
    Ok(out)
}
