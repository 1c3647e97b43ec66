//! Relation between per-event test AP and fire size.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::training::EventScore;
use crate::util::{mean, pearson};

use super::AnalysisError;

const N_BINS: usize = 30;

/// Mean AP of the events whose size falls in `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_ap: f64,
    pub n: usize,
}

/// Correlation of per-event AP with log10 fire size, with log-binned
/// means for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub overall_r: f64,
    pub per_year_r: BTreeMap<i32, f64>,
    pub bins: Vec<SizeBin>,
    /// Events dropped for zero size or an undefined AP.
    pub skipped: usize,
    /// The events the statistics were computed from.
    pub events: Vec<EventScore>,
}

/// Pearson correlation between log10 event size and event AP, overall and
/// per test year, plus binned mean AP over 30 log-spaced size bins.
/// Degenerate inputs (constant size or constant AP) yield NaN correlations
/// rather than an error.
pub fn ap_vs_size(scores: &[EventScore]) -> Result<SizeReport, AnalysisError> {
    let usable: Vec<EventScore> = scores
        .iter()
        .filter(|e| e.fire_size > 0 && e.ap.is_finite())
        .cloned()
        .collect();
    if usable.len() < 3 {
        return Err(AnalysisError::TooFewSizedEvents { have: usable.len(), needed: 3 });
    }
    let skipped = scores.len() - usable.len();

    let log_size: Vec<f64> = usable.iter().map(|e| (e.fire_size as f64).log10()).collect();
    let ap: Vec<f64> = usable.iter().map(|e| e.ap).collect();
    let overall_r = pearson(&log_size, &ap);

    let mut per_year_r = BTreeMap::new();
    let years: std::collections::BTreeSet<i32> = usable.iter().map(|e| e.year).collect();
    for year in years {
        let xs: Vec<f64> = usable
            .iter()
            .filter(|e| e.year == year)
            .map(|e| (e.fire_size as f64).log10())
            .collect();
        let ys: Vec<f64> = usable.iter().filter(|e| e.year == year).map(|e| e.ap).collect();
        per_year_r.insert(year, pearson(&xs, &ys));
    }

    // log-spaced bins spanning the observed sizes; a degenerate span still
    // produces a usable single-width binning
    let lo = log_size.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = log_size.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / N_BINS as f64;
    let mut bins = Vec::with_capacity(N_BINS);
    for b in 0..N_BINS {
        let b_lo = lo + width * b as f64;
        let b_hi = b_lo + width;
        let members: Vec<f64> = usable
            .iter()
            .zip(&log_size)
            .filter(|(_, &ls)| {
                let idx = (((ls - lo) / width) as usize).min(N_BINS - 1);
                idx == b
            })
            .map(|(e, _)| e.ap)
            .collect();
        bins.push(SizeBin {
            lo: 10f64.powf(b_lo),
            hi: 10f64.powf(b_hi),
            mean_ap: mean(&members),
            n: members.len(),
        });
    }

    Ok(SizeReport { overall_r, per_year_r, bins, skipped, events: usable })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(year: i32, id: &str, size: u64, ap: f64) -> EventScore {
        EventScore { event_id: id.to_string(), year, ap, fire_size: size }
    }

    #[test]
    fn perfect_log_relation_gives_unit_correlation() {
        let mut scores = Vec::new();
        for (i, &size) in [10u64, 100, 1000, 10_000].iter().enumerate() {
            let ap = 0.1 + 0.05 * (size as f64).log10();
            scores.push(event(2018, &format!("a{i}"), size, ap));
            scores.push(event(2019, &format!("b{i}"), size, ap));
        }
        let report = ap_vs_size(&scores).unwrap();
        assert!((report.overall_r - 1.0).abs() < 1e-9, "r = {}", report.overall_r);
        assert!((report.per_year_r[&2018] - 1.0).abs() < 1e-9);
        assert!((report.per_year_r[&2019] - 1.0).abs() < 1e-9);
        assert_eq!(report.skipped, 0);
    }

    #[test]
    fn constant_ap_has_undefined_correlation() {
        let scores: Vec<EventScore> =
            (0..5).map(|i| event(2018, &format!("e{i}"), 10 * (i + 1), 0.4)).collect();
        let report = ap_vs_size(&scores).unwrap();
        assert!(report.overall_r.is_nan());
        assert!(report.per_year_r[&2018].is_nan());
    }

    #[test]
    fn zero_size_and_nan_ap_events_are_skipped() {
        let mut scores = vec![
            event(2018, "a", 10, 0.2),
            event(2018, "b", 100, 0.5),
            event(2018, "c", 1000, 0.7),
        ];
        scores.push(event(2018, "zero", 0, 0.9));
        scores.push(event(2018, "undef", 50, f64::NAN));
        let report = ap_vs_size(&scores).unwrap();
        assert_eq!(report.skipped, 2);
        assert_eq!(report.events.len(), 3);
        let binned: usize = report.bins.iter().map(|b| b.n).sum();
        assert_eq!(binned, 3);
    }

    #[test]
    fn too_few_sized_events_is_an_error() {
        let scores = vec![event(2018, "a", 10, 0.2), event(2018, "b", 0, 0.5)];
        assert!(matches!(
            ap_vs_size(&scores),
            Err(AnalysisError::TooFewSizedEvents { have: 1, needed: 3 })
        ));
    }

    #[test]
    fn bins_span_the_size_range_and_average_correctly() {
        // two clusters far apart: smallest sizes land in the first bin,
        // largest in the last
        let scores = vec![
            event(2018, "a", 10, 0.2),
            event(2018, "b", 10, 0.4),
            event(2018, "c", 100_000, 0.8),
        ];
        let report = ap_vs_size(&scores).unwrap();
        assert_eq!(report.bins.len(), 30);
        assert_eq!(report.bins[0].n, 2);
        assert!((report.bins[0].mean_ap - 0.3).abs() < 1e-12);
        assert_eq!(report.bins[29].n, 1);
        assert!((report.bins[29].mean_ap - 0.8).abs() < 1e-12);
        for b in &report.bins[1..29] {
            assert_eq!(b.n, 0);
            assert!(b.mean_ap.is_nan());
        }
    }
}
