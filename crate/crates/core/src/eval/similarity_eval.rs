//! Generates one candidate per held-out (student, expert) pair and scores it against all
//! of that pair's ground-truth annotations.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::baselines::{permute_student_baseline, random_baseline, BaselineMode, NnIndex};
use super::similarity::{similarity_score, SimilarityError, TokenEmbedder, VectorEmbedder};
use super::{summarize_groups, EvalError, EvalReport, Metric, Result};
use crate::backbone::{embed_tokens, GenerationConfig, SharedLm};
use crate::model::CorgiModel;
use crate::seed::derive_seed;
use crate::stats;
use crate::traj::{CorrectionSample, Dataset, Dist, Source, Split, Task};

/// A held-out pair with all its human references.
#[derive(Debug, Clone)]
pub struct EvalPair<'a> {
    pub student_id: &'a str,
    pub expert_id: &'a str,
    pub task: Task,
    pub domain: &'a str,
    pub dist: Dist,
    pub references: Vec<String>,
}

/// Human-annotated pairs of `split`, in first-appearance order.
pub fn eval_pairs(d: &Dataset, split: Split) -> Vec<EvalPair<'_>> {
    let mut order: Vec<(&str, &str)> = Vec::new();
    let mut refs: BTreeMap<(&str, &str), (Dist, Vec<String>)> = BTreeMap::new();
    for s in d.split(split).filter(|s| s.source == Source::Human) {
        let key = (s.student_id.as_str(), s.expert_id.as_str());
        let entry = refs.entry(key).or_insert_with(|| {
            order.push(key);
            (s.dist, Vec::new())
        });
        entry.1.push(s.correction.clone());
    }
    order
        .into_iter()
        .map(|key| {
            let (dist, references) = refs.remove(&key).expect("key recorded");
            let t = d.trajectory(key.0);
            EvalPair { student_id: key.0, expert_id: key.1, task: t.task, domain: &t.domain, dist, references }
        })
        .collect()
}

/// Produces one candidate correction per pair.
pub trait CorrectionGenerator {
    fn name(&self) -> String;
    /// `index` is the pair's position in the evaluation order, used to derive seeds.
    fn generate(&mut self, d: &Dataset, pair: &EvalPair<'_>, index: usize) -> Result<String>;
}

pub struct CorgiGenerator<'m> {
    pub model: &'m CorgiModel,
    pub decode: GenerationConfig,
    pub label: String,
}

impl CorrectionGenerator for CorgiGenerator<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn generate(&mut self, d: &Dataset, pair: &EvalPair<'_>, index: usize) -> Result<String> {
        let cfg = GenerationConfig { seed: derive_seed(self.decode.seed, index as u64), ..self.decode.clone() };
        let g = self.model.generate(d.trajectory(pair.student_id), d.trajectory(pair.expert_id), &cfg)?;
        Ok(g.text)
    }
}

/// Random / nearest-neighbor / permute-student baselines.
pub struct BaselineGenerator<'a> {
    mode: BaselineMode,
    train: &'a Dataset,
    model: Option<&'a CorgiModel>,
    index: Option<NnIndex>,
    seed: u64,
}

impl<'a> BaselineGenerator<'a> {
    /// `model` is required for nearest neighbors (it supplies the encoder).
    pub fn new(mode: BaselineMode, train: &'a Dataset, model: Option<&'a CorgiModel>, seed: u64) -> Result<Self> {
        let index = match (mode, model) {
            (BaselineMode::NearestNeighbors, Some(m)) => Some(NnIndex::build(m, train)?),
            (BaselineMode::NearestNeighbors, None) => {
                return Err(EvalError::NoCandidates("nearest neighbors needs a trained encoder".into()))
            }
            _ => None,
        };
        Ok(Self { mode, train, model, index, seed })
    }
}

impl CorrectionGenerator for BaselineGenerator<'_> {
    fn name(&self) -> String {
        self.mode.label().to_string()
    }

    fn generate(&mut self, d: &Dataset, pair: &EvalPair<'_>, index: usize) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, index as u64));
        let picked: &CorrectionSample = match self.mode {
            BaselineMode::Random => random_baseline(self.train, pair.task, pair.domain, &mut rng)?,
            BaselineMode::NearestNeighbors => {
                let (index, model) = (self.index.as_ref().expect("built"), self.model.expect("checked"));
                index.lookup(model, d.trajectory(pair.student_id), self.train, &mut rng)?
            }
            BaselineMode::PermuteStudent => {
                let pool: Vec<&CorrectionSample> = d.samples.iter().collect();
                permute_student_baseline(&pool, pair.student_id, pair.expert_id, &mut rng)?
            }
        };
        Ok(picked.correction.clone())
    }
}

/// Cosine similarity over the backbone's input word embeddings. Blank text has no tokens.
pub fn backbone_embedder(lm: SharedLm) -> VectorEmbedder<impl Fn(&str) -> super::similarity::Result<Vec<Vec<f64>>>> {
    VectorEmbedder::new(move |text: &str| {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let err = |e: String| SimilarityError::Embedder(e);
        let (_, emb) = embed_tokens(lm.as_ref(), text).map_err(|e| err(e.to_string()))?;
        emb.to_dtype(candle_core::DType::F64).and_then(|t| t.to_vec2::<f64>()).map_err(|e| err(e.to_string()))
    })
}

/// Returns the first reference verbatim; the metric's upper bound.
pub struct EchoFirstReference;

impl CorrectionGenerator for EchoFirstReference {
    fn name(&self) -> String {
        "echo_first_reference".into()
    }

    fn generate(&mut self, _d: &Dataset, pair: &EvalPair<'_>, _index: usize) -> Result<String> {
        Ok(pair.references[0].clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub student_id: String,
    pub expert_id: String,
    pub task: Task,
    pub dist: Dist,
    pub candidate: String,
    pub score: f64,
}

/// Scores one candidate per pair of `split`; reports mean and sample std per group.
pub fn similarity_eval<E: TokenEmbedder>(
    generator: &mut dyn CorrectionGenerator,
    d: &Dataset,
    split: Split,
    embedder: &E,
) -> Result<(Vec<EvalReport>, Vec<PairScore>)> {
    let pairs = eval_pairs(d, split);
    if pairs.is_empty() {
        return Err(EvalError::EmptySplit(split));
    }
    let mut scores = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let candidate = generator.generate(d, pair, i)?;
        let score = similarity_score(embedder, &candidate, &pair.references)?;
        scores.push(PairScore {
            student_id: pair.student_id.to_string(),
            expert_id: pair.expert_id.to_string(),
            task: pair.task,
            dist: pair.dist,
            candidate,
            score,
        });
    }
    let rows: Vec<(Task, Dist, f64)> = scores.iter().map(|s| (s.task, s.dist, s.score)).collect();
    let reports = summarize_groups(
        &rows,
        Metric::Similarity,
        &generator.name(),
        |v| stats::mean(v).expect("non-empty"),
        |v| stats::summarize(v).expect("non-empty").std,
    );
    Ok((reports, scores))
}
