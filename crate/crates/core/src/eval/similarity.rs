//! Multi-reference similarity: greedy token-matching F1, with references weighted by
//! how much they agree with the other references.

use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimilarityError {
    #[error("no references to score against")]
    EmptyReferences,
    #[error("embedder failed: {0}")]
    Embedder(String),
}

pub type Result<T, E = SimilarityError> = std::result::Result<T, E>;

/// Turns text into token-level vectors and compares two of them.
pub trait TokenEmbedder {
    type Token;
    fn tokens(&self, text: &str) -> Result<Vec<Self::Token>>;
    /// Similarity of two tokens; the stub returns 1 for equal tokens and 0 otherwise.
    fn sim(&self, a: &Self::Token, b: &Self::Token) -> f64;
}

/// Exact-match embedder over lowercase alphanumeric words.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchEmbedder;

impl TokenEmbedder for ExactMatchEmbedder {
    type Token = String;

    fn tokens(&self, text: &str) -> Result<Vec<String>> {
        Ok(text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect())
    }

    fn sim(&self, a: &String, b: &String) -> f64 {
        if a == b {
            1.0
        } else {
            0.0
        }
    }
}

/// Unit-normalized token vectors compared by cosine similarity.
pub struct VectorEmbedder<F: Fn(&str) -> Result<Vec<Vec<f64>>>> {
    embed: F,
}

impl<F: Fn(&str) -> Result<Vec<Vec<f64>>>> VectorEmbedder<F> {
    pub fn new(embed: F) -> Self {
        Self { embed }
    }
}

impl<F: Fn(&str) -> Result<Vec<Vec<f64>>>> TokenEmbedder for VectorEmbedder<F> {
    type Token = Vec<f64>;

    fn tokens(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        Ok((self.embed)(text)?
            .into_iter()
            .map(|v| {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.into_iter().map(|x| x / norm).collect()
                } else {
                    v
                }
            })
            .collect())
    }

    fn sim(&self, a: &Vec<f64>, b: &Vec<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

/// Greedy-matching F1 between two token sequences. Empty sides score 0.
pub fn greedy_f1<E: TokenEmbedder>(e: &E, cand: &[E::Token], reference: &[E::Token]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let best = |from: &[E::Token], to: &[E::Token]| -> f64 {
        from.iter().map(|a| to.iter().map(|b| e.sim(a, b)).fold(f64::NEG_INFINITY, f64::max)).sum::<f64>()
            / from.len() as f64
    };
    let precision = best(cand, reference);
    let recall = best(reference, cand);
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Distinct references (whitespace-normalized), in sorted order.
pub fn distinct_references(references: &[String]) -> Vec<String> {
    references.iter().map(|r| normalize_ws(r)).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Agreement weight of each distinct reference: its mean F1 against the others.
/// A single reference gets weight 1.
pub fn reference_weights<E: TokenEmbedder>(e: &E, references: &[String]) -> Result<Vec<(String, f64)>> {
    let refs = distinct_references(references);
    if refs.is_empty() {
        return Err(SimilarityError::EmptyReferences);
    }
    if refs.len() == 1 {
        return Ok(vec![(refs[0].clone(), 1.0)]);
    }
    let toks: Vec<Vec<E::Token>> = refs.iter().map(|r| e.tokens(r)).collect::<Result<_>>()?;
    let k = refs.len();
    Ok(refs
        .into_iter()
        .enumerate()
        .map(|(j, r)| {
            let total: f64 = (0..k).filter(|&i| i != j).map(|i| greedy_f1(e, &toks[j], &toks[i])).sum();
            (r, total / (k - 1) as f64)
        })
        .collect())
}

/// Agreement-weighted normalized maximum over references.
///
/// `score = max_j(w_j * F1_j) / max_j w_j`; with every weight zero this falls back to the
/// plain maximum F1. References are treated as a set, so repeated annotations do not
/// change the weights.
pub fn similarity_score<E: TokenEmbedder>(e: &E, candidate: &str, references: &[String]) -> Result<f64> {
    let weighted = reference_weights(e, references)?;
    let cand = e.tokens(candidate)?;
    let mut best_weighted = 0.0f64;
    let mut best_plain = 0.0f64;
    let mut max_w = 0.0f64;
    for (r, w) in &weighted {
        let f1 = greedy_f1(e, &cand, &e.tokens(r)?);
        best_weighted = best_weighted.max(w * f1);
        best_plain = best_plain.max(f1);
        max_w = max_w.max(*w);
    }
    Ok(if max_w > 0.0 { best_weighted / max_w } else { best_plain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn refs(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_single_reference_scores_one() {
        let s = similarity_score(&ExactMatchEmbedder, "turn a bit later", &refs(&["turn a bit later"])).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn disjoint_scores_zero() {
        let s = similarity_score(&ExactMatchEmbedder, "go left", &refs(&["turn right", "slow down"])).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn single_reference_is_plain_f1() {
        // candidate {a, b, c} vs reference {a, b, d, e}: P = 2/3, R = 1/2
        let s = similarity_score(&ExactMatchEmbedder, "a b c", &refs(&["a b d e"])).unwrap();
        let (p, r) = (2.0 / 3.0, 0.5);
        assert!((s - 2.0 * p * r / (p + r)).abs() < 1e-12);
    }

    #[test]
    fn outlier_reference_is_down_weighted() {
        // hand pairwise F1 on 3-token strings:
        // F1(x, y) = 2/3 (two shared tokens), F1(x, z) = F1(y, z) = 0
        let w = reference_weights(&ExactMatchEmbedder, &refs(&["turn left now", "turn left soon", "brake very hard"]))
            .unwrap();
        let get = |s: &str| w.iter().find(|(r, _)| r == s).unwrap().1;
        assert!((get("turn left now") - 1.0 / 3.0).abs() < 1e-12);
        assert!((get("turn left soon") - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(get("brake very hard"), 0.0);
    }

    #[test]
    fn empty_references_error() {
        assert_eq!(similarity_score(&ExactMatchEmbedder, "x", &[]), Err(SimilarityError::EmptyReferences));
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]).prop_map(String::from)
    }

    fn sentence() -> impl Strategy<Value = String> {
        prop::collection::vec(word(), 1..5).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn symmetric_under_reordering(c in sentence(), mut rs in prop::collection::vec(sentence(), 1..5), k in 0usize..5) {
            let a = similarity_score(&ExactMatchEmbedder, &c, &rs).unwrap();
            let len = rs.len();
            rs.rotate_left(k % len);
            rs.reverse();
            let b = similarity_score(&ExactMatchEmbedder, &c, &rs).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn duplicating_best_reference_never_lowers_score(c in sentence(), rs in prop::collection::vec(sentence(), 1..5)) {
            let before = similarity_score(&ExactMatchEmbedder, &c, &rs).unwrap();
            let cand = ExactMatchEmbedder.tokens(&c).unwrap();
            let best = rs
                .iter()
                .max_by(|a, b| {
                    let fa = greedy_f1(&ExactMatchEmbedder, &cand, &ExactMatchEmbedder.tokens(a).unwrap());
                    let fb = greedy_f1(&ExactMatchEmbedder, &cand, &ExactMatchEmbedder.tokens(b).unwrap());
                    fa.total_cmp(&fb)
                })
                .unwrap()
                .clone();
            let mut more = rs.clone();
            more.push(best);
            let after = similarity_score(&ExactMatchEmbedder, &c, &more).unwrap();
            prop_assert!(after >= before);
        }
    }
}
