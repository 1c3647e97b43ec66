//! Wilcoxon signed-rank test for paired samples.
//!
//! Zero differences are discarded, absolute differences are ranked with
//! average ranks for ties, and `W` is the smaller of the positive and
//! negative rank sums. For up to 25 retained pairs the null distribution is
//! enumerated exactly by dynamic programming over doubled ranks (doubling
//! turns average half-ranks into integers); larger samples fall back on the
//! normal approximation with tie and continuity corrections. Reported
//! p-values are two-sided.

use serde::{Deserialize, Serialize};

use super::ObjectiveError;

const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Smaller of the positive and negative rank sums.
    pub w: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Number of pairs retained after dropping zero differences.
    pub n_used: usize,
    /// Whether the p-value comes from exact enumeration.
    pub exact: bool,
}

/// Two-sided Wilcoxon signed-rank test on paired observations.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, ObjectiveError> {
    if a.len() != b.len() {
        return Err(ObjectiveError::PairedLengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult { w: 0.0, p_value: 1.0, n_used: 0, exact: true });
    }

    let ranks = average_ranks(&diffs);
    let mut w_pos = 0.0;
    let mut w_neg = 0.0;
    for (d, r) in diffs.iter().zip(ranks.iter()) {
        if *d > 0.0 {
            w_pos += r;
        } else {
            w_neg += r;
        }
    }
    let w = w_pos.min(w_neg);

    if n <= EXACT_LIMIT {
        let p = exact_p(&ranks, w);
        Ok(WilcoxonResult { w, p_value: p, n_used: n, exact: true })
    } else {
        let p = normal_p(&ranks, w, n);
        Ok(WilcoxonResult { w, p_value: p, n_used: n, exact: false })
    }
}

/// Ranks of |d| starting at 1, ties receiving the average of their span.
fn average_ranks(diffs: &[f64]) -> Vec<f64> {
    let n = diffs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && diffs[idx[end]].abs() == diffs[idx[start]].abs() {
            end += 1;
        }
        // positions start..end (0-based) share ranks start+1..end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Exact two-sided p-value by enumerating the distribution of the rank sum
/// under random sign flips. Works on doubled ranks so average ranks become
/// integers: the generating polynomial is the product of (1 + x^(2 r_i)).
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &d in &doubled {
        for t in (0..=reach).rev() {
            if counts[t] > 0.0 {
                counts[t + d] += counts[t];
            }
        }
        reach += d;
    }
    let n_outcomes = 2.0f64.powi(ranks.len() as i32);
    let w2 = (2.0 * w).round() as usize;
    let tail: f64 = counts[..=w2.min(total)].iter().sum();
    (2.0 * tail / n_outcomes).min(1.0)
}

/// Normal approximation with tie correction on the variance and a 0.5
/// continuity correction toward the mean.
fn normal_p(ranks: &[f64], w: f64, n: usize) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    // subtract sum(t^3 - t)/48 over tie groups
    let mut sorted: Vec<f64> = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        var -= (t * t * t - t) / 48.0;
        i = j;
    }
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w - mean + 0.5) / var.sqrt();
    (2.0 * std_normal_cdf(z)).min(1.0)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Abramowitz-Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}
