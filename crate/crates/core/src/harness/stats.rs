//! Paired one-sided Wilcoxon signed-rank test and summary statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// Largest number of non-zero pairs handled with the exact null distribution.
pub const EXACT_LIMIT: usize = 25;
pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs with a non-zero difference.
    pub n: usize,
    /// Sum of ranks of positive differences `a - b`.
    pub w_plus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks (1-based) of `values` in ascending order.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        order[i..=j].iter().for_each(|&k| ranks[k] = rank);
        i = j + 1;
    }
    ranks
}

/// Number of sign patterns giving each doubled rank sum, indexed by that sum.
fn sign_pattern_counts(doubled_ranks: &[usize]) -> Vec<f64> {
    let total: usize = doubled_ranks.iter().sum();
    let mut counts = vec![0.0; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled_ranks {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// One-sided test of `H1: a < b` (differences `a - b` shifted below zero).
///
/// The p-value is `P(W+ <= observed)` under the symmetric null. Zero
/// differences are dropped; ties share average ranks. Exact for up to
/// [`EXACT_LIMIT`] non-zero pairs, normal approximation with tie and
/// continuity correction above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::shape("wilcoxon pairs", a.len(), b.len()));
    }
    if a.len() < MIN_PAIRS {
        return Err(Error::InvalidConfig(format!(
            "need at least {MIN_PAIRS} pairs, got {}",
            a.len()
        )));
    }
    if let Some(index) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "wilcoxon input".into(),
            index,
        });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::Undefined("all paired differences are zero".into()));
    }
    let n = diffs.len();
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n <= EXACT_LIMIT {
        // Average ranks are multiples of 1/2, so doubled ranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let counts = sign_pattern_counts(&doubled);
        let observed = (2.0 * w_plus).round() as usize;
        let at_or_below: f64 = counts[..=observed].iter().sum();
        return Ok(WilcoxonResult {
            n,
            w_plus,
            p_value: at_or_below / 2f64.powi(n as i32),
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = magnitudes.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - mean + 0.5) / variance.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(WilcoxonResult {
        n,
        w_plus,
        p_value: normal.cdf(z).min(1.0),
        exact: false,
    })
}

/// p-value of the one-sided signed-rank test that `a` is smaller than `b`.
pub fn wilcoxon_one_sided(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(wilcoxon_signed_rank(a, b)?.p_value)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}
