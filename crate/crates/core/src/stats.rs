//! Two-pass mean and standard deviation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 when n = 1.
    pub std: f64,
    pub n: usize,
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Mean and sample standard deviation, or `None` for an empty slice.
pub fn summarize(xs: &[f64]) -> Option<Summary> {
    let m = mean(xs)?;
    let n = xs.len();
    let std = if n < 2 {
        0.0
    } else {
        let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    Some(Summary { mean: m, std, n })
}

/// Population standard deviation (n denominator).
pub fn population_std(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some((xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_formula() {
        let s = summarize(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.n, 2);
    }

    #[test]
    fn single_value_has_zero_spread() {
        assert_eq!(summarize(&[4.0]).unwrap(), Summary { mean: 4.0, std: 0.0, n: 1 });
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn large_offset_is_stable() {
        let xs: Vec<f64> = (0..1000).map(|i| 1e9 + (i % 2) as f64).collect();
        let s = summarize(&xs).unwrap();
        assert!((s.std - 0.5002501876563868).abs() < 1e-9);
    }
}
