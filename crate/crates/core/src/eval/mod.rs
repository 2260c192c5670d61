//! Held-out evaluation: perplexity with permutation ablations, multi-reference
//! similarity, retrieval baselines, and table-shaped reports.

pub mod baselines;
pub mod perplexity;
pub mod similarity;
pub mod similarity_eval;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::stats;
use crate::traj::{Dist, Task};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("split {0} has no samples to evaluate")]
    EmptySplit(crate::traj::Split),
    #[error("no candidates: {0}")]
    NoCandidates(String),
    #[error("training split has no usable samples")]
    EmptyTrain,
    #[error(transparent)]
    Similarity(#[from] similarity::SimilarityError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Perplexity,
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadKind {
    OverSeeds,
    OverSamples,
}

/// One `mean ± spread` cell. `task`/`dist` of `None` aggregate over everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Option<Task>,
    pub dist: Option<Dist>,
    pub metric: Metric,
    pub method: String,
    pub mean: f64,
    pub spread: f64,
    pub spread_kind: SpreadKind,
    pub n: usize,
}

impl EvalReport {
    /// `mean ± spread` rounded to three significant digits, e.g. `145 ± 1.5`.
    pub fn cell(&self) -> String {
        format_pm(self.mean, self.spread)
    }
}

/// Formats `a ± b` with three significant digits and no trailing zeros.
pub fn format_pm(mean: f64, spread: f64) -> String {
    format!("{} \u{b1} {}", sig3(mean), sig3(spread))
}

fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Groups `(task, dist, value)` rows into per-group and overall reports; `center` and
/// `spread` map a group's values to the reported mean and spread.
pub fn summarize_groups(
    rows: &[(Task, Dist, f64)],
    metric: Metric,
    method: &str,
    center: impl Fn(&[f64]) -> f64,
    spread: impl Fn(&[f64]) -> f64,
) -> Vec<EvalReport> {
    let mut groups: BTreeMap<(Task, Dist), Vec<f64>> = BTreeMap::new();
    for &(task, dist, v) in rows {
        groups.entry((task, dist)).or_default().push(v);
    }
    let all: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let mut out: Vec<EvalReport> = groups
        .into_iter()
        .map(|((task, dist), vs)| report(Some(task), Some(dist), metric, method, &vs, &center, &spread))
        .collect();
    if !all.is_empty() {
        out.push(report(None, None, metric, method, &all, &center, &spread));
    }
    out
}

fn report(
    task: Option<Task>,
    dist: Option<Dist>,
    metric: Metric,
    method: &str,
    values: &[f64],
    center: &impl Fn(&[f64]) -> f64,
    spread: &impl Fn(&[f64]) -> f64,
) -> EvalReport {
    EvalReport {
        task,
        dist,
        metric,
        method: method.to_string(),
        mean: center(values),
        spread: spread(values),
        spread_kind: SpreadKind::OverSamples,
        n: values.len(),
    }
}

/// Combines per-seed report sets into `over_seeds` rows: mean of the per-seed means and
/// their sample standard deviation, with `n` counting seeds.
pub fn aggregate_over_seeds(per_seed: &[Vec<EvalReport>]) -> Vec<EvalReport> {
    let mut groups: BTreeMap<(Option<Task>, Option<Dist>, Metric, String), Vec<f64>> = BTreeMap::new();
    for reports in per_seed {
        for r in reports.iter().filter(|r| r.spread_kind == SpreadKind::OverSamples) {
            groups.entry((r.task, r.dist, r.metric, r.method.clone())).or_default().push(r.mean);
        }
    }
    groups
        .into_iter()
        .map(|((task, dist, metric, method), means)| {
            let s = stats::summarize(&means).expect("non-empty");
            EvalReport {
                task,
                dist,
                metric,
                method,
                mean: s.mean,
                spread: s.std,
                spread_kind: SpreadKind::OverSeeds,
                n: s.n,
            }
        })
        .collect()
}

/// Renders reports as a methods-by-columns table, one column per (task, dist).
pub fn render_table(reports: &[EvalReport], kind: SpreadKind) -> String {
    let rows: Vec<&EvalReport> = reports.iter().filter(|r| r.spread_kind == kind).collect();
    let mut columns: Vec<(Option<Task>, Option<Dist>)> = rows.iter().map(|r| (r.task, r.dist)).collect();
    columns.sort();
    columns.dedup();
    // the overall column goes last
    columns.sort_by_key(|c| c.0.is_none());
    let mut methods: Vec<&str> = Vec::new();
    for r in &rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let header = |c: &(Option<Task>, Option<Dist>)| match c {
        (Some(t), Some(d)) => format!("{} {}", t.as_str(), d.as_str()),
        _ => "all".to_string(),
    };
    let mut out = String::new();
    let _ = write!(out, "| method |");
    for c in &columns {
        let _ = write!(out, " {} |", header(c));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &columns {
        out.push_str("---|");
    }
    out.push('\n');
    for m in methods {
        let _ = write!(out, "| {m} |");
        for c in &columns {
            let cell = rows
                .iter()
                .find(|r| r.method == m && (r.task, r.dist) == *c)
                .map(|r| r.cell())
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_match_table_style() {
        assert_eq!(format_pm(145.0, 1.5), "145 \u{b1} 1.5");
        assert_eq!(format_pm(0.3, 0.01), "0.3 \u{b1} 0.01");
        assert_eq!(format_pm(1.84, 0.7), "1.84 \u{b1} 0.7");
        assert_eq!(format_pm(-0.17, 1.16), "-0.17 \u{b1} 1.16");
        assert_eq!(format_pm(145.04, 1.5049), "145 \u{b1} 1.5");
    }

    #[test]
    fn seed_aggregation() {
        let r = |mean: f64| EvalReport {
            task: None,
            dist: None,
            metric: Metric::Perplexity,
            method: "corgi".into(),
            mean,
            spread: 9.0,
            spread_kind: SpreadKind::OverSamples,
            n: 10,
        };
        let agg = aggregate_over_seeds(&[vec![r(1.0)], vec![r(3.0)], vec![r(5.0)]]);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].mean, 3.0);
        assert_eq!(agg[0].spread, 2.0);
        assert_eq!(agg[0].n, 3);
        assert_eq!(agg[0].spread_kind, SpreadKind::OverSeeds);
    }

    #[test]
    fn table_has_one_row_per_method() {
        let rows = summarize_groups(
            &[(Task::Drawing, Dist::InDomain, 1.0), (Task::Drawing, Dist::OutOfDomain, 2.0)],
            Metric::Similarity,
            "random",
            |v| stats::mean(v).unwrap(),
            |v| stats::summarize(v).unwrap().std,
        );
        let t = render_table(&rows, SpreadKind::OverSamples);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("drawing ID"));
    }
}
