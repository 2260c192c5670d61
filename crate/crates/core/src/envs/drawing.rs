//! Handwritten-character stroke archives.
//!
//! Layout: `<root>/manifest.json` plus one stroke file per drawing at
//! `<root>/<script>/<character_id>/<drawer>.txt`. A stroke file holds `x,y,t` lines in
//! canvas pixels (origin top-left, y down); `BREAK` ends a stroke; `START`, `END`, blank
//! lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{canonical_domain, domain_dist, EnvError, Result};
use crate::traj::{resample_uniform, Dist, Role, Split, Task, Trajectory, MAX_LEN};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STUDENTS_PER_CHARACTER: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokePoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterEntry {
    pub script: String,
    pub character_id: String,
    pub expert: String,
    /// Drawer id to split.
    pub students: BTreeMap<String, Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeManifest {
    #[serde(default = "default_canvas")]
    pub canvas_size: f64,
    pub characters: Vec<CharacterEntry>,
}

fn default_canvas() -> f64 {
    105.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentDrawing {
    pub trajectory: Trajectory,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawingStimulus {
    pub script: String,
    pub character_id: String,
    pub dist: Dist,
    pub expert: Trajectory,
    /// The expert's strokes on the unit canvas, pen-up gaps preserved, for rendering.
    pub render: Vec<Vec<[f64; 2]>>,
    pub students: Vec<StudentDrawing>,
}

impl DrawingStimulus {
    pub fn id(&self) -> String {
        stimulus_id(&self.script, &self.character_id)
    }
}

pub fn stimulus_id(script: &str, character_id: &str) -> String {
    format!("{script}-{character_id}")
}

/// Parses one stroke file into strokes of raw points.
pub fn parse_strokes(text: &str, path: &Path) -> Result<Vec<Vec<StrokePoint>>> {
    let mut strokes = Vec::new();
    let mut current = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line == "START" || line == "END" {
            continue;
        }
        if line == "BREAK" {
            if !current.is_empty() {
                strokes.push(std::mem::take(&mut current));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        let parse = |f: &str| {
            f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| EnvError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("not a finite number: {f:?}"),
            })
        };
        if fields.len() != 3 {
            return Err(EnvError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected x,y,t, got {line:?}"),
            });
        }
        current.push(StrokePoint { x: parse(fields[0])?, y: parse(fields[1])?, t: parse(fields[2])? });
    }
    if !current.is_empty() {
        strokes.push(current);
    }
    if strokes.iter().map(Vec::len).sum::<usize>() < 2 {
        return Err(EnvError::Format { path: path.to_path_buf(), line: 0, message: "fewer than 2 points".into() });
    }
    Ok(strokes)
}

/// Maps pixels to the unit canvas (y up), clamping strays outside the canvas.
pub fn normalize_strokes(strokes: &[Vec<StrokePoint>], canvas_size: f64) -> Vec<Vec<[f64; 2]>> {
    strokes
        .iter()
        .map(|s| {
            s.iter().map(|p| [(p.x / canvas_size).clamp(0.0, 1.0), (1.0 - p.y / canvas_size).clamp(0.0, 1.0)]).collect()
        })
        .collect()
}

/// Joins strokes into one 2-wide trajectory, resampled down to 600 steps when longer.
pub fn strokes_to_trajectory(id: &str, script: &str, role: Role, strokes: &[Vec<[f64; 2]>]) -> Result<Trajectory> {
    let steps: Vec<Vec<f64>> = strokes.iter().flatten().map(|p| p.to_vec()).collect();
    let raw_len = steps.len();
    let mut t = Trajectory::new(id, Task::Drawing, script, role, steps)?
        .with_meta("pen_up_joins", (strokes.len().saturating_sub(1)).to_string());
    if raw_len > MAX_LEN {
        t = resample_uniform(&t, MAX_LEN)?.with_meta("resampled_from", raw_len.to_string());
    }
    Ok(t)
}

fn load_drawing(path: &Path, canvas: f64) -> Result<Vec<Vec<[f64; 2]>>> {
    let text = std::fs::read_to_string(path)?;
    Ok(normalize_strokes(&parse_strokes(&text, path)?, canvas))
}

/// Loads every character of the archive's manifest: one expert and five students each.
pub fn load_strokes(root: &Path) -> Result<Vec<DrawingStimulus>> {
    let manifest_path = root.join(MANIFEST_FILE);
    let manifest: StrokeManifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
    if !(manifest.canvas_size > 0.0) {
        return Err(EnvError::Format { path: manifest_path, line: 0, message: "canvas_size must be positive".into() });
    }
    let mut out = Vec::with_capacity(manifest.characters.len());
    for c in &manifest.characters {
        let script = canonical_domain(&c.script);
        let dist = domain_dist(Task::Drawing, &script)?;
        let sid = stimulus_id(&script, &c.character_id);
        let dir = root.join(&c.script).join(&c.character_id);
        if !dir.is_dir() {
            return Err(EnvError::MissingCharacter(sid));
        }
        if c.students.len() != STUDENTS_PER_CHARACTER || c.students.contains_key(&c.expert) {
            return Err(EnvError::Format {
                path: manifest_path.clone(),
                line: 0,
                message: format!("{sid}: need 1 expert and {STUDENTS_PER_CHARACTER} distinct students"),
            });
        }
        let render = load_drawing(&dir.join(format!("{}.txt", c.expert)), manifest.canvas_size)?;
        let expert = strokes_to_trajectory(&format!("{sid}-{}", c.expert), &script, Role::Expert, &render)?;
        let mut students = Vec::with_capacity(c.students.len());
        for (drawer, &split) in &c.students {
            let strokes = load_drawing(&dir.join(format!("{drawer}.txt")), manifest.canvas_size)?;
            let trajectory = strokes_to_trajectory(&format!("{sid}-{drawer}"), &script, Role::Student, &strokes)?;
            students.push(StudentDrawing { trajectory, split });
        }
        out.push(DrawingStimulus { script, character_id: c.character_id.clone(), dist, expert, render, students });
    }
    Ok(out)
}
