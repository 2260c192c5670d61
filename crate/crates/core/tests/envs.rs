use std::fmt::Write as _;
use std::path::Path;

use corgi_core::envs::drawing::load_strokes;
use corgi_core::envs::movement::load_clips;
use corgi_core::envs::pairs::{attach_corrections, drawing_rows, make_pairs, movement_rows, Annotation};
use corgi_core::envs::steering::{simulate_all, SteeringConfig};
use corgi_core::envs::EnvError;
use corgi_core::traj::{pad_trajectory, Dist, Role, Split, Trajectory, MAX_LEN, MAX_WIDTH};

const CHARACTERS: [(&str, &str); 2] = [("Arabic", "c01"), ("Futurama", "c07")];
const DRAWERS: [&str; 6] = ["d0", "d1", "d2", "d3", "d4", "d5"];

fn stroke_file(seed: usize) -> String {
    let mut s = String::from("START\n");
    for stroke in 0..2 {
        for i in 0..12 {
            let x = 10.0 + 7.0 * i as f64 + seed as f64;
            let y = 20.0 + 30.0 * stroke as f64 + (i * seed % 5) as f64;
            writeln!(s, "{x},{y},{}", 100 * (stroke * 12 + i)).unwrap();
        }
        s.push_str("BREAK\n");
    }
    s.push_str("END\n");
    s
}

fn write_archive(root: &Path) {
    let mut characters = Vec::new();
    for (script, ch) in CHARACTERS {
        let dir = root.join(script).join(ch);
        std::fs::create_dir_all(&dir).unwrap();
        for (k, d) in DRAWERS.iter().enumerate() {
            std::fs::write(dir.join(format!("{d}.txt")), stroke_file(k)).unwrap();
        }
        let students: serde_json::Map<String, serde_json::Value> = DRAWERS[1..]
            .iter()
            .enumerate()
            .map(|(i, d)| (d.to_string(), serde_json::json!(if i < 4 { "train" } else { "test" })))
            .collect();
        characters
            .push(serde_json::json!({"script": script, "character_id": ch, "expert": "d0", "students": students}));
    }
    let manifest = serde_json::json!({"canvas_size": 105.0, "characters": characters});
    std::fs::write(root.join("manifest.json"), manifest.to_string()).unwrap();
}

#[test]
fn stroke_archive_yields_experts_and_five_students_each() {
    let dir = tempfile::tempdir().unwrap();
    write_archive(dir.path());
    let stimuli = load_strokes(dir.path()).unwrap();
    assert_eq!(stimuli.len(), 2);
    let students: Vec<&Trajectory> = stimuli.iter().flat_map(|s| s.students.iter().map(|d| &d.trajectory)).collect();
    assert_eq!(students.len(), 10);
    let all: Vec<&Trajectory> = stimuli.iter().map(|s| &s.expert).chain(students.iter().copied()).collect();
    for t in &all {
        assert_eq!(t.width(), 2);
        assert!(t.steps.iter().flatten().all(|v| (0.0..=1.0).contains(v)), "{}", t.id);
    }
    assert_eq!(stimuli.iter().map(|s| s.dist).collect::<Vec<_>>(), [Dist::InDomain, Dist::OutOfDomain]);

    let trajectories: Vec<Trajectory> = all.into_iter().cloned().collect();
    let pairs = make_pairs(&trajectories, &drawing_rows(&stimuli)).unwrap();
    assert_eq!(pairs.len(), 10);
    assert_eq!(pairs.iter().filter(|p| p.dist == Dist::OutOfDomain).count(), 5);
    assert_eq!(pairs.iter().filter(|p| p.split == Split::Test).count(), 2);
    let annotations: Vec<Annotation> = pairs
        .iter()
        .map(|p| Annotation { student_id: p.student_id.clone(), correction: " close the loop ".into() })
        .collect();
    let d = attach_corrections(&pairs, trajectories, &annotations).unwrap();
    assert_eq!(d.samples.len(), 10);
    assert!(d.samples.iter().all(|s| s.correction == "close the loop" && s.id.ends_with("-a1")));
}

#[test]
fn missing_character_directory_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_archive(dir.path());
    std::fs::remove_dir_all(dir.path().join("Futurama")).unwrap();
    assert!(matches!(load_strokes(dir.path()), Err(EnvError::MissingCharacter(id)) if id == "futurama-c07"));
}

fn write_clips(dir: &Path, dims: usize) {
    let emb = |k: usize| (0..dims).map(|i| format!("{}", (i * k) as f64 / 1000.0)).collect::<Vec<_>>().join(",");
    std::fs::write(dir.join("expert.txt"), emb(1)).unwrap();
    std::fs::write(dir.join("student.txt"), emb(2)).unwrap();
    let manifest = serde_json::json!({
        "source_model": "motion-clip",
        "clips": [
            {"id": "wave-e", "file": "expert.txt", "activity": "Wave", "role": "expert"},
            {"id": "wave-s", "file": "student.txt", "activity": "Wave", "role": "student", "expert": "wave-e", "split": "test"},
        ]
    });
    std::fs::write(dir.join("clips.json"), manifest.to_string()).unwrap();
}

#[test]
fn movement_embedding_pads_to_a_single_column() {
    let dir = tempfile::tempdir().unwrap();
    write_clips(dir.path(), 512);
    let clips = load_clips(dir.path()).unwrap();
    let student = clips.iter().find(|c| c.role == Role::Student).unwrap();
    assert_eq!((student.trajectory.len(), student.trajectory.width()), (512, 1));
    assert_eq!(student.dist, Dist::OutOfDomain);
    assert_eq!(student.trajectory.meta["source_model"], "motion-clip");

    let padded = pad_trajectory(&student.trajectory).unwrap();
    assert_eq!((padded.valid_length(), padded.valid_width()), (512, 1));
    for row in 0..MAX_LEN {
        for col in 0..MAX_WIDTH {
            let expected = if row < 512 && col == 0 { (row * 2) as f64 / 1000.0 } else { 0.0 };
            assert_eq!(padded.get(row, col), expected, "({row}, {col})");
        }
    }

    let trajectories: Vec<Trajectory> = clips.iter().map(|c| c.trajectory.clone()).collect();
    let pairs = make_pairs(&trajectories, &movement_rows(&clips).unwrap()).unwrap();
    assert_eq!(pairs.len(), 1);
    assert_eq!((pairs[0].domain.as_str(), pairs[0].split), ("wave", Split::Test));
}

#[test]
fn oversize_embeddings_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_clips(dir.path(), MAX_LEN + 1);
    assert!(matches!(load_clips(dir.path()), Err(EnvError::OversizeEmbedding { len, .. }) if len == MAX_LEN + 1));
}

#[test]
fn steering_sets_pair_cleanly_and_bike_is_ood() {
    let sets = simulate_all(&SteeringConfig::default(), 0).unwrap();
    let trajectories: Vec<Trajectory> = sets.iter().flat_map(|s| s.trajectories().cloned()).collect();
    let rows: Vec<_> = sets.iter().flat_map(|s| s.rows.clone()).collect();
    let pairs = make_pairs(&trajectories, &rows).unwrap();
    assert_eq!(pairs.len(), 60);
    for p in &pairs {
        assert_eq!(p.dist == Dist::OutOfDomain, p.domain == "bike");
    }
}
