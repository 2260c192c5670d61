//! Temperature scaling, nucleus (top-p) truncation and seeded token draws.

use rand::Rng;

/// Softmax of `logits / temperature`, computed in f64 with max subtraction.
pub fn tempered_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// The minimal set of tokens, in descending-probability order, whose cumulative
/// probability reaches `top_p`, returned as `(token, renormalized probability)`.
///
/// A token is kept iff the mass strictly before it is `< top_p`. Ties in probability
/// are ordered by token id so the set is deterministic.
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut before = 0.0;
    for idx in order {
        if before >= top_p && !kept.is_empty() {
            break;
        }
        kept.push(idx);
        before += probs[idx];
    }
    let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
    kept.into_iter().map(|i| (i, probs[i] / mass)).collect()
}

/// Draws one token from the nucleus of the tempered distribution.
pub fn sample_token<R: Rng + ?Sized>(logits: &[f64], temperature: f64, top_p: f64, rng: &mut R) -> usize {
    let probs = tempered_softmax(logits, temperature);
    let set = nucleus(&probs, top_p);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(idx, p) in &set {
        acc += p;
        if u < acc {
            return idx;
        }
    }
    set.last().expect("nucleus is never empty").0
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}
