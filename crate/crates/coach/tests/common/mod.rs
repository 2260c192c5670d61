#![allow(dead_code)]

use std::f64::consts::TAU;
use std::path::Path;
use std::sync::Arc;

use corgi_coach::correction::{FixedCorrector, RandomCorrector};
use corgi_coach::stimulus::Stimulus;
use corgi_coach::{Coach, TrialSubmission};
use corgi_core::traj::{CorrectionSample, Dataset, Dist, Role, Source, Split, Task, Trajectory};

pub const CORGI_TEXT: &str = "curve the top more";

pub fn loop_points(n: usize, phase: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let a = TAU * i as f64 / (n - 1) as f64 + phase;
            vec![0.5 + 0.3 * a.cos(), 0.5 + 0.2 * (2.0 * a).sin()]
        })
        .collect()
}

pub fn expert(id: &str, domain: &str, phase: f64) -> Trajectory {
    Trajectory::new(id, Task::Drawing, domain, Role::Expert, loop_points(80, phase)).unwrap()
}

pub fn stimuli() -> Vec<Stimulus> {
    vec![
        Stimulus::from_expert("arabic-c01", expert("arabic-c01-e", "arabic", 0.0)).unwrap(),
        Stimulus::from_expert("futurama-c02", expert("futurama-c02-e", "futurama", 0.7)).unwrap(),
    ]
}

/// Drawing annotations for two scripts plus steering annotations that must never be served.
pub fn annotations() -> Dataset {
    let mut trajectories = Vec::new();
    let mut samples = Vec::new();
    let mut add = |task: Task, domain: &str, width: usize, texts: &[&str], split: Split| {
        let eid = format!("{domain}-e{}", trajectories.len());
        trajectories.push(Trajectory::new(&eid, task, domain, Role::Expert, vec![vec![0.1; width]; 3]).unwrap());
        for (k, text) in texts.iter().enumerate() {
            let sid = format!("{domain}-s{}-{k}", trajectories.len());
            trajectories.push(Trajectory::new(&sid, task, domain, Role::Student, vec![vec![0.2; width]; 3]).unwrap());
            samples.push(CorrectionSample {
                id: format!("{sid}-a1"),
                student_id: sid,
                expert_id: eid.clone(),
                correction: text.to_string(),
                split,
                dist: Dist::InDomain,
                source: Source::Human,
                parent_id: None,
            });
        }
    };
    add(Task::Drawing, "arabic", 2, &["close the loop", "start lower", "make the tail longer"], Split::Train);
    add(Task::Drawing, "burmese", 2, &["round the corners"], Split::Train);
    add(Task::Drawing, "arabic", 2, &["held out text"], Split::Test);
    add(Task::Steering, "car", 8, &["brake earlier", "turn sooner"], Split::Train);
    Dataset::new(samples, trajectories).unwrap()
}

pub fn drawing_texts(script: &str) -> Vec<&'static str> {
    match script {
        "arabic" => vec!["close the loop", "start lower", "make the tail longer"],
        _ => vec!["close the loop", "start lower", "make the tail longer", "round the corners"],
    }
}

pub fn coach(dir: &Path) -> Coach {
    Coach::open(dir, stimuli())
        .unwrap()
        .with_corgi(Arc::new(FixedCorrector(CORGI_TEXT.into())))
        .with_random(Arc::new(RandomCorrector::new(annotations())))
}

/// The stimulus' expert shifted by `offset` in both coordinates.
pub fn shifted(stimulus: &str, offset: f64) -> TrialSubmission {
    let phase = if stimulus.starts_with("arabic") { 0.0 } else { 0.7 };
    let pts = loop_points(80, phase).into_iter().map(|p| vec![p[0] + offset, p[1] + offset]).collect();
    TrialSubmission { strokes: vec![pts] }
}
