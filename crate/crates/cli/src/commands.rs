use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use candle_core::DType;
use corgi_coach::correction::{CorgiCorrector, RandomCorrector};
use corgi_coach::gains::aggregate_gains;
use corgi_coach::http::{serve as serve_http, TOKEN_ENV};
use corgi_coach::preference::PreferenceItem;
use corgi_coach::session::Condition;
use corgi_coach::stimulus::Stimulus;
use corgi_coach::store::Store;
use corgi_coach::Coach;
use corgi_core::augment::{augment_dataset, OfflineClient, ParaphraseClient};
use corgi_core::backbone::tiny::{build_tiny_snapshot, default_corpus, TinyConfig};
use corgi_core::backbone::{load_backbone, SharedLm};
use corgi_core::envs::drawing::load_strokes;
use corgi_core::envs::movement::load_clips;
use corgi_core::envs::pairs::{attach_corrections, drawing_rows, make_pairs, movement_rows, Annotation, PairRow};
use corgi_core::envs::steering::{simulate_all, SteeringConfig};
use corgi_core::eval::baselines::BaselineMode;
use corgi_core::eval::perplexity::perplexity_eval;
use corgi_core::eval::similarity::{ExactMatchEmbedder, TokenEmbedder};
use corgi_core::eval::similarity_eval::{
    backbone_embedder, similarity_eval, BaselineGenerator, CorgiGenerator, CorrectionGenerator, EchoFirstReference,
};
use corgi_core::eval::{aggregate_over_seeds, render_table, EvalReport, SpreadKind};
use corgi_core::model::CorgiModel;
use corgi_core::train::{train as train_encoder, Checkpoint, TrainError};
use corgi_core::traj::{
    load_dataset, read_jsonl, save_dataset, split_dataset, write_jsonl, Dataset, Split, SplitRatios, Trajectory,
};
use serde::{Deserialize, Serialize};

use crate::client::{HttpParaphraseClient, API_KEY_ENV};
use crate::config::{existing, RunConfig};
use crate::error::{CliError, Result};
use crate::{
    AugmentArgs, EvalPplArgs, EvalSimArgs, GenerateArgs, ModelArgs, PrepareArgs, ReportArgs, ServeArgs, SimulateArgs,
    SnapshotArgs, TrainArgs,
};

pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";
/// Ablation backbones are built from this variant seed so checkpoints stay reloadable.
pub const BACKBONE_VARIANT_SEED: u64 = 0;

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value).context("serializing output")?;
    writeln!(out, "{line}")?;
    Ok(())
}

fn load_lm(cfg: &RunConfig, m: &ModelArgs, dtype: DType) -> Result<SharedLm> {
    let dir = cfg.snapshot(m.snapshot.as_deref())?;
    Ok(load_backbone(&dir, cfg.backbone(m.backbone), BACKBONE_VARIANT_SEED, dtype)?)
}

/// Loads a checkpoint and the backbone it was trained against.
pub fn load_model(cfg: &RunConfig, m: &ModelArgs) -> Result<CorgiModel> {
    let dir = m.checkpoint.as_deref().ok_or_else(|| CliError::validation("--checkpoint is required"))?;
    let ckpt = Checkpoint::load_unchecked(&existing(dir)?)?;
    let lm = load_lm(cfg, m, ckpt.dtype())?;
    ckpt.check_backbone(&lm)?;
    Ok(ckpt.model(lm)?)
}

fn dataset(dir: &Path) -> Result<Dataset> {
    Ok(load_dataset(&existing(dir)?)?)
}

pub fn prepare(cfg: &RunConfig, a: &PrepareArgs, out: &mut dyn Write) -> Result<()> {
    if a.drawing.is_none() && a.movement.is_none() && a.steering.is_none() {
        return Err(CliError::validation("give at least one of --drawing, --movement, --steering"));
    }
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut rows: Vec<PairRow> = Vec::new();
    if let Some(root) = &a.drawing {
        let stimuli = load_strokes(&existing(root)?)?;
        rows.extend(drawing_rows(&stimuli));
        for s in stimuli {
            trajectories.push(s.expert);
            trajectories.extend(s.students.into_iter().map(|st| st.trajectory));
        }
    }
    if let Some(dir) = &a.movement {
        let clips = load_clips(&existing(dir)?)?;
        rows.extend(movement_rows(&clips)?);
        trajectories.extend(clips.into_iter().map(|c| c.trajectory));
    }
    if let Some(dir) = &a.steering {
        let dir = existing(dir)?;
        trajectories.extend(read_jsonl::<Trajectory>(&dir.join(TRAJECTORIES_FILE))?);
        rows.extend(read_jsonl::<PairRow>(&dir.join(PAIRS_FILE))?);
    }
    let annotations: Vec<Annotation> = read_jsonl(&existing(&a.annotations)?)?;
    let pairs = make_pairs(&trajectories, &rows)?;
    let mut d = attach_corrections(&pairs, trajectories, &annotations)?;
    if let Some(valid) = a.valid_fraction {
        d = split_dataset(&d, SplitRatios::new(1.0 - valid, valid)?, cfg.seed)?;
    }
    save_dataset(&d, &a.out)?;
    write_jsonl(&a.out.join(PAIRS_FILE), &pairs)?;
    let per_split: BTreeMap<String, usize> =
        [Split::Train, Split::Valid, Split::Test].into_iter().map(|s| (s.to_string(), d.count(s))).collect();
    emit(
        out,
        &serde_json::json!({
            "samples": d.samples.len(),
            "trajectories": d.trajectories.len(),
            "pairs": pairs.len(),
            "splits": per_split,
        }),
    )
}

pub fn augment(cfg: &RunConfig, a: &AugmentArgs, out: &mut dyn Write) -> Result<()> {
    let d = dataset(&a.data)?;
    let client: Box<dyn ParaphraseClient> = if a.offline {
        Box::new(OfflineClient)
    } else {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()).ok_or_else(|| {
            CliError::validation(format!("{API_KEY_ENV} is not set; pass --offline to use the cache only"))
        })?;
        Box::new(HttpParaphraseClient::new(cfg.file.paraphrase.clone(), key)?)
    };
    let outcome = augment_dataset(&d, client.as_ref(), &a.cache, &cfg.file.augment)?;
    save_dataset(&outcome.dataset, &a.out)?;
    for (id, reason) in &outcome.skipped {
        tracing::warn!(sample = %id, %reason, "not augmented");
    }
    emit(
        out,
        &serde_json::json!({
            "train": outcome.dataset.count(Split::Train),
            "fetched": outcome.fetched,
            "skipped": outcome.skipped.len(),
        }),
    )
}

pub fn train(cfg: &RunConfig, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let d = dataset(&a.data)?;
    let lm = load_lm(cfg, &a.model, cfg.dtype()?)?;
    let mut tc = cfg.file.train.clone();
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = a.patience {
        tc.early_stop_patience = v;
    }
    let mut ec = cfg.file.encoder.clone();
    ec.embed_dim = lm.spec().embed_dim;
    if let Some(v) = a.n_tokens {
        ec.n_tokens = v;
    }
    let ckpt = match train_encoder(&d, lm, &ec, &tc) {
        Ok(c) => c,
        Err(TrainError::Divergence { epoch, last_good }) => {
            last_good.save(&a.out)?;
            return Err(CliError::Runtime(anyhow::anyhow!(
                "loss became non-finite at epoch {epoch}; last good checkpoint saved to {}",
                a.out.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    ckpt.save(&a.out)?;
    let m = &ckpt.manifest;
    emit(
        out,
        &serde_json::json!({
            "checkpoint": a.out,
            "epochs_run": m.history.len(),
            "best_epoch": m.best_epoch,
            "best_valid_loss": ckpt.best_valid_loss(),
            "initial_valid_loss": m.initial_valid_loss,
            "backbone_fingerprint": m.backbone_fingerprint,
        }),
    )
}

pub fn eval_ppl(cfg: &RunConfig, a: &EvalPplArgs, out: &mut dyn Write) -> Result<()> {
    let d = dataset(&a.data)?;
    let model = load_model(cfg, &a.model)?;
    for r in perplexity_eval(&model, &d, a.split, a.mode, cfg.seed, &a.method)? {
        emit(out, &r)?;
    }
    Ok(())
}

fn run_similarity<E: TokenEmbedder>(
    generator: &mut dyn CorrectionGenerator,
    d: &Dataset,
    a: &EvalSimArgs,
    embedder: &E,
    out: &mut dyn Write,
) -> Result<()> {
    let (reports, scores) = similarity_eval(generator, d, a.split, embedder)?;
    if let Some(path) = &a.scores {
        let rows: Vec<serde_json::Value> = scores
            .iter()
            .map(|s| {
                serde_json::json!({
                    "student_id": s.student_id,
                    "expert_id": s.expert_id,
                    "task": s.task,
                    "dist": s.dist,
                    "candidate": s.candidate,
                    "score": s.score,
                })
            })
            .collect();
        write_jsonl(path, &rows)?;
    }
    for r in &reports {
        emit(out, r)?;
    }
    Ok(())
}

pub fn eval_sim(cfg: &RunConfig, a: &EvalSimArgs, out: &mut dyn Write) -> Result<()> {
    let d = dataset(&a.data)?;
    let model = match a.model.checkpoint {
        Some(_) => Some(load_model(cfg, &a.model)?),
        None => None,
    };
    let mut generator: Box<dyn CorrectionGenerator + '_> = match a.method.as_str() {
        "corgi" => {
            let model = model.as_ref().ok_or_else(|| CliError::validation("--method corgi needs --checkpoint"))?;
            Box::new(CorgiGenerator { model, decode: cfg.file.generation.clone(), label: "corgi".into() })
        }
        "echo" => Box::new(EchoFirstReference),
        other => {
            let mode: BaselineMode = other.parse().map_err(CliError::validation)?;
            Box::new(BaselineGenerator::new(mode, &d, model.as_ref(), cfg.seed)?)
        }
    };
    match a.embedder.as_str() {
        "exact" => run_similarity(generator.as_mut(), &d, a, &ExactMatchEmbedder, out),
        "backbone" => {
            let lm = match &model {
                Some(m) => m.lm().clone(),
                None => load_lm(cfg, &a.model, cfg.dtype()?)?,
            };
            run_similarity(generator.as_mut(), &d, a, &backbone_embedder(lm), out)
        }
        other => Err(CliError::validation(format!("--embedder must be exact or backbone, got {other:?}"))),
    }
}

/// Input of `generate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairInput {
    pub student: Trajectory,
    pub expert: Trajectory,
}

pub fn generate(cfg: &RunConfig, a: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(existing(&a.pair)?)?;
    let pair: PairInput = serde_json::from_str(&text)?;
    pair.student.validate()?;
    pair.expert.validate()?;
    let model = load_model(cfg, &a.model)?;
    let mut decode = cfg.file.generation.clone();
    if let Some(v) = a.temperature {
        decode.temperature = v;
    }
    if let Some(v) = a.top_p {
        decode.top_p = v;
    }
    if let Some(v) = a.max_new_tokens {
        decode.max_new_tokens = v;
    }
    let g = model.generate(&pair.student, &pair.expert, &decode)?;
    emit(
        out,
        &serde_json::json!({
            "text": g.text,
            "token_ids": g.token_ids,
            "truncated": g.truncated,
            "seed": decode.seed,
        }),
    )
}

pub fn simulate_steering(cfg: &RunConfig, a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let sc = match a.steering_config.as_ref().or(cfg.file.steering.as_ref()) {
        Some(p) => SteeringConfig::load(&existing(p)?)?,
        None => SteeringConfig::default(),
    };
    let sets = simulate_all(&sc, cfg.seed)?;
    std::fs::create_dir_all(&a.out)?;
    let trajectories: Vec<&Trajectory> = sets.iter().flat_map(|s| s.trajectories()).collect();
    let rows: Vec<&PairRow> = sets.iter().flat_map(|s| &s.rows).collect();
    write_jsonl(&a.out.join(TRAJECTORIES_FILE), trajectories)?;
    write_jsonl(&a.out.join(PAIRS_FILE), rows)?;
    for s in &sets {
        emit(
            out,
            &serde_json::json!({
                "vehicle": s.expert.trajectory.domain,
                "expert_success": s.expert.success,
                "expert_steps": s.expert.trajectory.len(),
                "students": s.students.len(),
            }),
        )?;
    }
    Ok(())
}

pub fn serve(cfg: &RunConfig, a: &ServeArgs, out: &mut dyn Write) -> Result<()> {
    let stimuli = load_strokes(&existing(&a.strokes)?)?
        .iter()
        .map(Stimulus::try_from)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let store = a.store.clone().unwrap_or_else(|| cfg.file.serve.store.clone());
    let mut coach = Coach::open(&store, stimuli)?;
    let mut conditions = vec![Condition::None, Condition::Visual];
    if a.model.checkpoint.is_some() {
        let model = load_model(cfg, &a.model)?;
        coach = coach.with_corgi(Arc::new(CorgiCorrector::new(model, cfg.file.generation.clone())));
        conditions.push(Condition::Corgi);
    }
    if let Some(dir) = &a.annotations {
        coach = coach.with_random(Arc::new(RandomCorrector::new(dataset(dir)?)));
        conditions.push(Condition::Random);
    }
    let mut items = 0;
    if let Some(path) = &a.preference_items {
        let list: Vec<PreferenceItem> = read_jsonl(&existing(path)?)?;
        items = list.len();
        coach = coach.with_preference_items(list);
    }
    let addr = a.addr.unwrap_or(cfg.file.serve.addr);
    let conditions: Vec<String> = conditions.iter().map(ToString::to_string).collect();
    emit(
        out,
        &serde_json::json!({
            "addr": addr.to_string(),
            "store": store,
            "stimuli": coach.stimulus_ids(),
            "conditions": conditions,
            "preference_items": items,
        }),
    )?;
    if a.check {
        return Ok(());
    }
    out.flush()?;
    let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
    if token.is_none() {
        tracing::warn!("{TOKEN_ENV} is not set; the service accepts unauthenticated requests");
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve_http(Arc::new(coach), token, addr))?;
    Ok(())
}

pub fn report(_cfg: &RunConfig, a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    if a.inputs.is_empty() && a.coach_store.is_none() {
        return Err(CliError::validation("give evaluation record files or --coach-store"));
    }
    let per_file: Vec<Vec<EvalReport>> =
        a.inputs.iter().map(|p| Ok(read_jsonl(&existing(p)?)?)).collect::<Result<_>>()?;
    match per_file.len() {
        0 => {}
        1 => write!(out, "{}", render_table(&per_file[0], SpreadKind::OverSamples))?,
        _ => write!(out, "{}", render_table(&aggregate_over_seeds(&per_file), SpreadKind::OverSeeds))?,
    }
    if let Some(dir) = &a.coach_store {
        let store = Store::open(&existing(dir)?)?;
        let state = store.state();
        for condition in [Condition::Corgi, Condition::Random, Condition::None, Condition::Visual] {
            match aggregate_gains(state.sessions.values(), condition) {
                Ok(g) => writeln!(out, "{condition}: {} (n={})", g.display, g.n)?,
                Err(corgi_coach::CoachError::NoSessions(_)) => writeln!(out, "{condition}: no complete sessions")?,
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(())
}

pub fn snapshot(cfg: &RunConfig, a: &SnapshotArgs, out: &mut dyn Write) -> Result<()> {
    let corpus = match &a.corpus {
        Some(p) => std::fs::read_to_string(existing(p)?)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        None => default_corpus(),
    };
    let mut tiny = TinyConfig { seed: cfg.seed, ..TinyConfig::default() };
    if let Some(v) = a.embed_dim {
        tiny.embed_dim = v;
    }
    if let Some(v) = a.layers {
        tiny.n_layer = v;
    }
    if let Some(v) = a.heads {
        tiny.n_head = v;
    }
    if let Some(v) = a.pretrain_steps {
        tiny.pretrain_steps = v;
    }
    let manifest = build_tiny_snapshot(&a.out, &corpus, &tiny)?;
    emit(out, &manifest)
}
