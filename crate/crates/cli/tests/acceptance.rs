//! Headline acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use corgi_cli::commands::PairInput;
use corgi_coach::gains::{aggregate_gains, learning_gain};
use corgi_coach::score::{compute_score, flat_line_trajectory};
use corgi_coach::session::{Condition, TeachingSession, Trial};
use corgi_core::augment::{augment_dataset, build_paraphrase_prompt, AugmentOptions, FixtureClient, OfflineClient};
use corgi_core::backbone::sampling::{nucleus, sample_token};
use corgi_core::backbone::tiny::{build_tiny_snapshot, default_corpus, TinyConfig};
use corgi_core::backbone::{
    backbone_checksum, generate_correction, greedy_decode, load_backbone, BackboneKind, GenerationConfig, SharedLm,
};
use corgi_core::encoder::{EncoderConfig, Normalizer, TrajectoryEncoder};
use corgi_core::envs::steering::{rollout, step, ExpertPolicy, SteeringAction, SteeringConfig, SteeringState, Vehicle};
use corgi_core::eval::perplexity::{perplexity_eval, PerplexityMode};
use corgi_core::eval::similarity::{reference_weights, similarity_score, ExactMatchEmbedder};
use corgi_core::eval::EvalReport;
use corgi_core::model::{CorgiModel, Example};
use corgi_core::prompt::{LossScope, PromptSequence};
use corgi_core::synthetic::{
    bigger_smaller, overfit_train_config, suite_encoder_config, suite_train_config, swapped, SyntheticConfig,
};
use corgi_core::train::{train, validate, Checkpoint, TrainConfig};
use corgi_core::traj::{save_dataset, Dataset, Role, Split, Task, Trajectory, MAX_WIDTH};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn tiny_lm(dtype: DType) -> SharedLm {
    load_backbone(common::tiny_snapshot(), BackboneKind::PretrainedCausal, 0, dtype).unwrap()
}

struct Suite {
    lm: SharedLm,
    data: Dataset,
    ckpt: Checkpoint,
}

fn suite() -> &'static Suite {
    static S: OnceLock<Suite> = OnceLock::new();
    S.get_or_init(|| {
        let lm = tiny_lm(DType::F32);
        let data = bigger_smaller(&SyntheticConfig::default());
        let ckpt =
            train(&data, lm.clone(), &suite_encoder_config(lm.spec().embed_dim, 0), &suite_train_config(0)).unwrap();
        Suite { lm, data, ckpt }
    })
}

fn overall(r: &[EvalReport]) -> f64 {
    r.iter().find(|r| r.task.is_none()).expect("overall row").mean
}

fn frozen_backbone() -> Outcome {
    let lm = tiny_lm(DType::F32);
    let data = bigger_smaller(&SyntheticConfig::default());
    let before = backbone_checksum(lm.as_ref()).unwrap();
    let enc_cfg = suite_encoder_config(lm.spec().embed_dim, 0);
    let initial = TrajectoryEncoder::init(&enc_cfg, lm.spec().embed_dim, DType::F32).unwrap().checksum();
    let start = Instant::now();
    let ckpt = train(&data, lm.clone(), &enc_cfg, &suite_train_config(0)).unwrap();
    let elapsed = start.elapsed();
    ensure!(backbone_checksum(lm.as_ref()).unwrap() == before, "backbone checksum changed");
    ensure!(ckpt.encoder().unwrap().checksum() != initial, "encoder checksum unchanged");
    ensure!(elapsed < Duration::from_secs(300), "training took {elapsed:?}");
    Ok(format!("{} epochs in {:.1}s", ckpt.manifest.history.len(), elapsed.as_secs_f64()))
}

fn gradient_check() -> Outcome {
    const EPS: f64 = 1e-5;
    let dir = tempfile::tempdir().unwrap();
    let tiny = TinyConfig { embed_dim: 8, n_head: 2, n_layer: 1, pretrain_steps: 20, ..TinyConfig::default() };
    build_tiny_snapshot(dir.path(), &default_corpus(), &tiny).unwrap();
    let lm = load_backbone(dir.path(), BackboneKind::PretrainedCausal, 0, DType::F64).unwrap();
    let data = bigger_smaller(&SyntheticConfig::overfit());
    let cfg = EncoderConfig { n_tokens: 2, embed_dim: 8, init_std: 0.2, seed: 11, ..EncoderConfig::default() };
    let mut encoder = TrajectoryEncoder::init(&cfg, 8, DType::F64).unwrap();
    encoder.set_normalizer(Normalizer::fit(&data));
    let model = CorgiModel::new(lm, encoder, LossScope::CorrectionOnly, true).unwrap();
    let samples: Vec<_> = data.split(Split::Train).take(2).collect();
    let examples: Vec<Example> = samples.iter().map(|s| Example::of(&data, s)).collect();
    let loss = || model.batch_losses(&examples).unwrap().mean_all().unwrap().to_scalar::<f64>().unwrap();
    let grads = model.batch_losses(&examples).unwrap().mean_all().unwrap().backward().unwrap();

    let values = |v: &Var| v.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let set = |v: &Var, vals: Vec<f64>| {
        v.set(&Tensor::from_vec(vals, v.as_tensor().shape(), v.as_tensor().device()).unwrap()).unwrap()
    };
    let steps = data.student(samples[0]).len();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut checked, mut worst) = (0, 0.0f64);
    for (layer, var) in model.encoder().vars().iter().enumerate() {
        let analytic = grads.get(var.as_tensor()).ok_or(format!("encoder var {layer} has no gradient"))?;
        let analytic = analytic.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let base = values(var);
        let cols = *var.as_tensor().dims().last().unwrap();
        for k in 0..8 {
            let i = if layer == 0 && k % 2 == 0 {
                (rng.gen_range(0..steps) * MAX_WIDTH + rng.gen_range(0..2)) * cols + rng.gen_range(0..cols)
            } else {
                rng.gen_range(0..base.len())
            };
            let mut plus = base.clone();
            plus[i] += EPS;
            set(var, plus);
            let lp = loss();
            let mut minus = base.clone();
            minus[i] -= EPS;
            set(var, minus);
            let lm = loss();
            set(var, base.clone());
            let numeric = (lp - lm) / (2.0 * EPS);
            let scale = analytic[i].abs().max(numeric.abs());
            if scale > 1e-7 {
                let rel = (analytic[i] - numeric).abs() / scale;
                ensure!(rel <= 1e-3, "var {layer}[{i}]: analytic {}, numeric {numeric}", analytic[i]);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    ensure!(checked >= 20, "only {checked} measurable coordinates");
    Ok(format!("{checked} coordinates, worst relative error {worst:.1e}"))
}

fn overfit() -> Outcome {
    let lm = tiny_lm(DType::F32);
    let data = bigger_smaller(&SyntheticConfig::overfit());
    ensure!(data.count(Split::Train) == 8, "fixture has {} train samples", data.count(Split::Train));
    let ckpt =
        train(&data, lm.clone(), &suite_encoder_config(lm.spec().embed_dim, 0), &overfit_train_config(0)).unwrap();
    let m = &ckpt.manifest;
    ensure!(m.history.len() == 50, "ran {} epochs", m.history.len());
    let last = m.history.last().unwrap().train_loss;
    let ratio = last / m.initial_train_loss;
    ensure!(ratio < 0.25, "final/initial train loss {ratio:.3}");
    Ok(format!("final/initial train loss {ratio:.3}"))
}

fn separability() -> Outcome {
    let s = suite();
    let model = s.ckpt.model(s.lm.clone()).unwrap();
    let matched: Vec<Example> = s.data.split(Split::Test).map(|x| Example::of(&s.data, x)).collect();
    let crossed: Vec<Example> = matched.iter().map(|e| Example { correction: swapped(e.correction), ..*e }).collect();
    let a = model.example_losses(&matched, 64).unwrap();
    let b = model.example_losses(&crossed, 64).unwrap();
    let wins = a.iter().zip(&b).filter(|(m, c)| m < c).count();
    ensure!(wins as f64 >= 0.8 * a.len() as f64, "matched label wins on {wins}/{}", a.len());
    let standard =
        overall(&perplexity_eval(&model, &s.data, Split::Test, PerplexityMode::Standard, 0, "corgi").unwrap());
    let permuted =
        overall(&perplexity_eval(&model, &s.data, Split::Test, PerplexityMode::PermuteStudent, 0, "corgi").unwrap());
    ensure!(standard < permuted, "perplexity {standard:.3} vs permuted {permuted:.3}");
    Ok(format!("{wins}/{} wins, perplexity {standard:.3} < {permuted:.3}", a.len()))
}

fn loss_perplexity_consistency() -> Outcome {
    let s = suite();
    let model = s.ckpt.model(s.lm.clone()).unwrap();
    let mut worst = 0.0f64;
    for split in [Split::Train, Split::Valid, Split::Test] {
        let loss = validate(&s.ckpt, s.lm.clone(), &s.data, split).unwrap();
        let ppl = overall(&perplexity_eval(&model, &s.data, split, PerplexityMode::Standard, 0, "corgi").unwrap());
        let gap = (loss.exp() - ppl).abs();
        ensure!(gap <= 1e-6, "{split}: exp(loss) {} vs perplexity {ppl}", loss.exp());
        worst = worst.max(gap);
    }
    Ok(format!("largest gap {worst:.1e}"))
}

fn nucleus_sampling() -> Outcome {
    let probs = [0.6, 0.3, 0.1];
    let kept: Vec<usize> = nucleus(&probs, 0.8).iter().map(|(i, _)| *i).collect();
    ensure!(kept == [0, 1], "nucleus kept {kept:?}");
    let logits: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = [0usize; 3];
    for _ in 0..10_000 {
        counts[sample_token(&logits, 1.0, 0.8, &mut rng)] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / 10_000.0).collect();
    ensure!(counts[2] == 0, "sampled outside the nucleus {} times", counts[2]);
    ensure!((freq[0] - 2.0 / 3.0).abs() <= 0.02 && (freq[1] - 1.0 / 3.0).abs() <= 0.02, "frequencies {freq:?}");

    let lm = tiny_lm(DType::F32);
    let d = lm.spec().embed_dim;
    for seed in 0..100u64 {
        let len = 2 + (seed % 7) as usize;
        let emb = Tensor::randn(0f32, 1.0, (len, d), &Device::Cpu).unwrap();
        let prefix = PromptSequence::from_parts(emb, None, Vec::new());
        let cfg = GenerationConfig { temperature: 1e-6, top_p: 0.9, max_new_tokens: 8, seed };
        let sampled = generate_correction(lm.as_ref(), &prefix, &cfg).unwrap();
        let greedy = greedy_decode(lm.as_ref(), &prefix, 8).unwrap();
        ensure!(sampled.token_ids == greedy.token_ids, "prompt {seed} diverges from greedy");
    }
    Ok(format!("frequencies {:.4} / {:.4}, 100 prompts greedy", freq[0], freq[1]))
}

fn augmentation() -> Outcome {
    let d = bigger_smaller(&SyntheticConfig { n_train: 5, n_valid: 2, n_test: 1, ..SyntheticConfig::default() });
    let mut client = FixtureClient::default();
    for s in &d.samples {
        let p = build_paraphrase_prompt(&s.id, &s.correction);
        client.insert(p.prompt_text, format!("1. {0}, please\n2. try to {0}\n3. you should {0}", s.correction));
    }
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let opts = AugmentOptions { concurrency: 2, max_retries: 1, initial_backoff_ms: 1 };
    let first = augment_dataset(&d, &client, &cache, &opts).unwrap();
    ensure!(
        first.dataset.count(Split::Train) == 4 * d.count(Split::Train),
        "train size {}",
        first.dataset.count(Split::Train)
    );
    for split in [Split::Valid, Split::Test] {
        ensure!(d.split(split).eq(first.dataset.split(split)), "{split} split changed");
    }
    let replay = augment_dataset(&d, &OfflineClient, &cache, &opts).unwrap();
    let bytes = |ds: &Dataset, name: &str| {
        save_dataset(ds, &dir.path().join(name)).unwrap();
        ["corrections.jsonl", "trajectories.jsonl"].map(|f| std::fs::read(dir.path().join(name).join(f)).unwrap())
    };
    ensure!(bytes(&first.dataset, "a") == bytes(&replay.dataset, "b"), "cache replay differs");
    ensure!(replay.fetched == 0, "replay fetched {} responses", replay.fetched);
    Ok(format!("{} -> {} train samples, replay identical", d.count(Split::Train), first.dataset.count(Split::Train)))
}

fn steering_physics() -> Outcome {
    let cfg = SteeringConfig::default();
    let vehicles = [Vehicle::Car, Vehicle::Plane, Vehicle::Bike];
    let mut worst_radius = 0.0f64;
    for v in vehicles {
        let vc = cfg.vehicle(v).unwrap();
        let mut s = SteeringState::new(1.0, 2.0, 0.3, 2.0);
        for _ in 0..1000 {
            s = step(vc, &s, SteeringAction { accel: 0.0, steer: 0.4 });
            ensure!((s.speed() - 2.0).abs() < 1e-12, "{v:?}: speed drifted to {}", s.speed());
        }

        let fine = corgi_core::envs::steering::VehicleConfig { dt: 1e-3, ..vc.clone() };
        let steer = 0.3;
        let radius = fine.wheelbase / (fine.steering_sensitivity * steer).tan();
        let mut s = SteeringState::new(0.0, 0.0, 0.0, 2.0);
        for _ in 0..(std::f64::consts::PI * radius / fine.dt) as usize {
            s = step(&fine, &s, SteeringAction { accel: 0.0, steer });
            let rel = (s.x.hypot(s.y - radius) - radius).abs() / radius;
            ensure!(rel <= 0.01, "{v:?}: radius off by {rel:.4}");
            worst_radius = worst_radius.max(rel);
        }

        for (x, y, h) in [(0.0, 0.0, 0.0), (10.0, -6.0, 1.2), (42.0, 20.0, std::f64::consts::PI)] {
            let sc = &cfg.scenario;
            let r =
                rollout(vc, sc, &mut ExpertPolicy, SteeringState::new(x, y, h, 0.0), sc.horizon, 0, "e", Role::Expert)
                    .unwrap();
            ensure!(
                r.success && r.trajectory.len() < sc.horizon,
                "{v:?} from ({x}, {y}, {h}) ends {:.2} away",
                r.final_distance
            );
        }
    }
    Ok(format!("worst radius error {:.2}%", 100.0 * worst_radius))
}

fn similarity_metric() -> Outcome {
    let e = ExactMatchEmbedder;
    let refs = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    ensure!(
        similarity_score(&e, "turn a bit later", &refs(&["turn a bit later"])).unwrap() == 1.0,
        "identical pair below 1"
    );

    let base = ["slow down early", "turn left now", "turn left soon", "brake very hard"];
    let reference = similarity_score(&e, "turn left early", &refs(&base)).unwrap();
    for order in [[3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]] {
        let permuted: Vec<&str> = order.iter().map(|&i| base[i]).collect();
        let s = similarity_score(&e, "turn left early", &refs(&permuted)).unwrap();
        ensure!(s == reference, "order {order:?} scores {s} vs {reference}");
    }

    // pairwise F1: now/soon share two of three tokens, the outlier shares none
    let outlier = refs(&["turn left now", "turn left soon", "brake very hard"]);
    let w = reference_weights(&e, &outlier).unwrap();
    let weight = |r: &str| w.iter().find(|(x, _)| x == r).unwrap().1;
    let expected = [("turn left now", 1.0 / 3.0), ("turn left soon", 1.0 / 3.0), ("brake very hard", 0.0)];
    for (r, want) in expected {
        ensure!((weight(r) - want).abs() < 1e-12, "weight of {r:?} is {}, expected {want}", weight(r));
    }
    let on_outlier = similarity_score(&e, "brake very hard", &outlier).unwrap();
    let on_consensus = similarity_score(&e, "turn left now", &outlier).unwrap();
    ensure!(on_outlier == 0.0 && on_consensus == 1.0, "outlier {on_outlier}, consensus {on_consensus}");
    Ok("identity, permutation symmetry and outlier weights hold".into())
}

fn session(id: usize, scores: [f64; 3]) -> TeachingSession {
    let t = Trajectory::new("t", Task::Drawing, "arabic", Role::Student, vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    TeachingSession {
        session_id: format!("s{id}"),
        stimulus_id: "arabic-c01".into(),
        condition: Condition::Corgi,
        seed: id as u64,
        trials: scores
            .iter()
            .enumerate()
            .map(|(i, &score)| Trial {
                index: i + 1,
                trajectory: t.clone(),
                score,
                correction_served: None,
                overlay_served: false,
            })
            .collect(),
        created_at: String::new(),
    }
}

fn teaching_scoring() -> Outcome {
    let line = |dx: f64, dy: f64| -> Trajectory {
        let steps = (0..101)
            .map(|i| {
                let t = i as f64 / 100.0;
                vec![0.2 + 0.6 * t + dx, 0.3 + 0.4 * t + dy]
            })
            .collect();
        Trajectory::new("l", Task::Drawing, "arabic", Role::Student, steps).unwrap()
    };
    let expert = line(0.0, 0.0);
    ensure!(compute_score(&expert, &expert).unwrap() == 100.0, "expert copy does not score 100");
    ensure!(compute_score(&flat_line_trajectory("arabic"), &expert).unwrap() == 0.0, "flat line does not score 0");
    let mut previous = f64::INFINITY;
    for k in 0..12 {
        let offset = 0.01 * k as f64;
        let s = compute_score(&line(offset * 0.6, offset * 0.8), &expert).unwrap();
        ensure!(s < previous, "offset {offset}: {s} is not below {previous}");
        previous = s;
    }
    let gain = learning_gain(&session(0, [40.0, 55.0, 60.0])).unwrap();
    ensure!(gain == 20.0, "learning gain {gain}");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sessions: Vec<TeachingSession> = (0..20)
        .map(|i| session(i, [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)]))
        .collect();
    let gains: Vec<f64> = sessions.iter().map(|s| s.trials[2].score - s.trials[0].score).collect();
    let (sum, sumsq) = gains.iter().fold((0.0, 0.0), |(a, b), g| (a + g, b + g * g));
    let mean = sum / 20.0;
    let std = ((sumsq - 20.0 * mean * mean) / 19.0).sqrt();
    let g = aggregate_gains(&sessions, Condition::Corgi).unwrap();
    ensure!(g.n == 20 && (g.mean - mean).abs() < 1e-9 && (g.std - std).abs() < 1e-9, "{g:?} vs mean {mean}, std {std}");
    Ok(format!("20-session gain {}", g.display))
}

fn generate_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let lm = tiny_lm(DType::F32);
    let data = bigger_smaller(&SyntheticConfig::overfit());
    let cfg = TrainConfig { epochs: 2, batch_size: 4, early_stop_patience: 1, ..TrainConfig::default() };
    let ckpt = train(&data, lm.clone(), &suite_encoder_config(lm.spec().embed_dim, 0), &cfg).unwrap();
    ckpt.save(&tmp.path().join("ckpt")).unwrap();
    let sample = data.split(Split::Valid).next().unwrap();
    let pair = PairInput { student: data.student(sample).clone(), expert: data.expert(sample).clone() };
    std::fs::write(tmp.path().join("pair.json"), serde_json::to_vec(&pair).unwrap()).unwrap();

    let run = || {
        let out = Command::new(env!("CARGO_BIN_EXE_corgi"))
            .args(["--seed", "17", "generate", "--pair"])
            .arg(tmp.path().join("pair.json"))
            .arg("--checkpoint")
            .arg(tmp.path().join("ckpt"))
            .arg("--snapshot")
            .arg(common::tiny_snapshot())
            .args(["--temperature", "1.0"])
            .output()
            .unwrap();
        (out.status.code(), out.stdout, String::from_utf8_lossy(&out.stderr).into_owned())
    };
    let (code, first, err) = run();
    ensure!(code == Some(0), "generate failed: {err}");
    let (_, second, _) = run();
    ensure!(first == second, "outputs differ between runs");
    let line: serde_json::Value = serde_json::from_slice(&first).unwrap();
    Ok(format!("{} bytes, {} tokens", first.len(), line["token_ids"].as_array().map_or(0, Vec::len)))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("frozen backbone", frozen_backbone),
        ("gradient correctness", gradient_check),
        ("overfit sanity", overfit),
        ("separability", separability),
        ("loss/perplexity consistency", loss_perplexity_consistency),
        ("nucleus sampling", nucleus_sampling),
        ("augmentation arithmetic", augmentation),
        ("steering physics", steering_physics),
        ("similarity metric", similarity_metric),
        ("teaching scoring", teaching_scoring),
        ("end-to-end determinism", generate_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
