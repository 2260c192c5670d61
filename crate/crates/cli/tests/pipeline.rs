mod common;

use candle_core::DType;
use common::{corgi, ok, path};
use corgi_cli::commands::PairInput;
use corgi_core::backbone::{load_backbone, BackboneKind, GenerationConfig};
use corgi_core::envs::pairs::PairRow;
use corgi_core::eval::EvalReport;
use corgi_core::train::Checkpoint;
use corgi_core::traj::{load_dataset, read_jsonl, Split};

const PHRASES: [&str; 3] = ["turn left sooner", "slow down near the spot", "brake harder at the end"];

fn reports(stdout: &str) -> Vec<EvalReport> {
    stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn overall(r: &[EvalReport]) -> f64 {
    r.iter().find(|r| r.task.is_none()).unwrap().mean
}

#[test]
fn steering_data_flows_from_simulation_to_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let at = |name: &str| path(&tmp.path().join(name));

    let manifest: serde_json::Value =
        serde_json::from_str(&ok(&["snapshot", "--out", &at("snap"), "--pretrain-steps", "20"])).unwrap();
    assert!(manifest["fingerprint"].as_str().is_some_and(|f| !f.is_empty()));

    let sim = ok(&["--seed", "3", "simulate-steering", "--out", &at("sim")]);
    assert_eq!(sim.lines().count(), 3);

    let rows: Vec<PairRow> = read_jsonl(&tmp.path().join("sim/pairs.jsonl")).unwrap();
    let annotations: String = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            serde_json::json!({"student_id": r.student_id, "correction": PHRASES[i % PHRASES.len()]}).to_string() + "\n"
        })
        .collect();
    std::fs::write(tmp.path().join("ann.jsonl"), annotations).unwrap();

    let prepared: serde_json::Value = serde_json::from_str(&ok(&[
        "prepare",
        "--steering",
        &at("sim"),
        "--annotations",
        &at("ann.jsonl"),
        "--valid-fraction",
        "0.15",
        "--out",
        &at("data"),
    ]))
    .unwrap();
    assert_eq!(prepared["samples"], rows.len());
    let data = load_dataset(&tmp.path().join("data")).unwrap();
    assert_eq!(data.count(Split::Test), 12);
    assert_eq!(data.count(Split::Valid), 7);

    let (data_dir, snap, ckpt) = (at("data"), at("snap"), at("ckpt"));
    let model_args = ["--snapshot", snap.as_str(), "--checkpoint", ckpt.as_str()];
    let trained: serde_json::Value = serde_json::from_str(&ok(&[
        "train",
        "--data",
        &at("data"),
        "--snapshot",
        &at("snap"),
        "--out",
        &at("ckpt"),
        "--epochs",
        "3",
        "--patience",
        "2",
        "--batch-size",
        "16",
    ]))
    .unwrap();
    assert!(trained["best_valid_loss"].as_f64().unwrap().is_finite());

    let ppl_args = |mode: &str, seed: &str| {
        let mut a = vec!["--seed", seed, "eval-ppl", "--data", &data_dir, "--mode", mode];
        a.extend(model_args);
        a.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let standard = ok(&ppl_args("standard", "0"));
    let permuted = ok(&ppl_args("permute_correction", "1"));
    assert!(overall(&reports(&standard)).is_finite() && overall(&reports(&permuted)).is_finite());
    std::fs::write(tmp.path().join("ppl0.jsonl"), &standard).unwrap();
    std::fs::write(tmp.path().join("ppl1.jsonl"), ok(&ppl_args("standard", "1"))).unwrap();

    let sim_random = ok(&["eval-sim", "--data", &at("data"), "--method", "random"]);
    let r = reports(&sim_random);
    assert!((0.0..=1.0).contains(&overall(&r)));
    assert_eq!(r[0].method, "random");
    let scores_file = at("scores.jsonl");
    let mut corgi_sim = vec!["eval-sim", "--data", &data_dir, "--embedder", "backbone", "--scores", &scores_file];
    corgi_sim.extend(model_args);
    assert!(overall(&reports(&ok(&corgi_sim))).is_finite());
    let scores: Vec<serde_json::Value> = read_jsonl(&tmp.path().join("scores.jsonl")).unwrap();
    assert!(!scores.is_empty());

    let one = ok(&["report", &at("ppl0.jsonl")]);
    let both = ok(&["report", &at("ppl0.jsonl"), &at("ppl1.jsonl")]);
    assert!(!one.trim().is_empty() && !both.trim().is_empty());
    assert_ne!(one, both);

    // generate through the command line matches a direct library call
    let sample = data.split(Split::Test).next().unwrap();
    let pair = PairInput { student: data.student(sample).clone(), expert: data.expert(sample).clone() };
    std::fs::write(tmp.path().join("pair.json"), serde_json::to_string(&pair).unwrap()).unwrap();
    let pair_file = at("pair.json");
    let mut gen = vec!["--seed", "11", "generate", "--pair", &pair_file];
    gen.extend(model_args);
    let line: serde_json::Value = serde_json::from_str(&ok(&gen)).unwrap();
    assert_eq!(ok(&gen), ok(&gen));

    let lm = load_backbone(&tmp.path().join("snap"), BackboneKind::PretrainedCausal, 0, DType::F32).unwrap();
    let model = Checkpoint::load(&tmp.path().join("ckpt"), &lm).unwrap().model(lm).unwrap();
    let direct = model
        .generate(&pair.student, &pair.expert, &GenerationConfig { seed: 11, ..GenerationConfig::default() })
        .unwrap();
    assert_eq!(line["text"], direct.text);
    assert_eq!(line["token_ids"], serde_json::json!(direct.token_ids));
}

#[test]
fn a_checkpoint_refuses_a_different_backbone() {
    let tmp = tempfile::tempdir().unwrap();
    let at = |name: &str| path(&tmp.path().join(name));
    let snap = path(common::tiny_snapshot());
    let data = corgi_core::synthetic::bigger_smaller(&corgi_core::synthetic::SyntheticConfig::overfit());
    corgi_core::traj::save_dataset(&data, &tmp.path().join("data")).unwrap();
    ok(&[
        "train",
        "--data",
        &at("data"),
        "--snapshot",
        &snap,
        "--out",
        &at("ckpt"),
        "--epochs",
        "2",
        "--patience",
        "1",
    ]);
    let r = corgi(&[
        "eval-ppl",
        "--data",
        &at("data"),
        "--split",
        "valid",
        "--snapshot",
        &snap,
        "--checkpoint",
        &at("ckpt"),
        "--backbone",
        "random",
    ]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("backbone"), "{}", r.stderr);
}
