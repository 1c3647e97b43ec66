//! Ranking metrics: average precision, precision-recall curves, F1.
//!
//! Average precision uses step-wise summation `AP = sum (R_n - R_{n-1}) P_n`
//! over descending unique score thresholds; tied scores are grouped into a
//! single threshold so the result is independent of input order. Samples
//! without any positive label have no defined AP and are reported as NaN so
//! aggregation layers can skip and count them.

use serde::{Deserialize, Serialize};

/// Precision-recall curve evaluated at descending unique thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PRCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ap: f64,
}

fn sorted_indices_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx
}

/// Step-wise average precision over descending unique thresholds.
/// Returns NaN when there is no positive label.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len(), "scores/labels length mismatch");
    let n_pos = labels.iter().filter(|l| **l).count();
    if n_pos == 0 {
        return f64::NAN;
    }
    let order = sorted_indices_desc(scores);
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        // advance through the whole tie group before emitting a PR point
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Full precision-recall curve with the same threshold grouping as
/// [`average_precision`].
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> PRCurve {
    assert_eq!(scores.len(), labels.len(), "scores/labels length mismatch");
    let n_pos = labels.iter().filter(|l| **l).count();
    let order = sorted_indices_desc(scores);
    let mut thresholds = Vec::new();
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let r = if n_pos == 0 { 0.0 } else { tp as f64 / n_pos as f64 };
        let p = tp as f64 / (tp + fp) as f64;
        thresholds.push(threshold);
        precision.push(p);
        recall.push(r);
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    let ap = if n_pos == 0 { f64::NAN } else { ap };
    PRCurve { thresholds, precision, recall, ap }
}

/// F1 at a fixed decision threshold (`score >= thr` predicts positive).
/// 0 when precision + recall is 0; NaN when there is no positive label.
pub fn f1_at_threshold(scores: &[f64], labels: &[bool], thr: f64) -> f64 {
    assert_eq!(scores.len(), labels.len(), "scores/labels length mismatch");
    let n_pos = labels.iter().filter(|l| **l).count();
    if n_pos == 0 {
        return f64::NAN;
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (s, l) in scores.iter().zip(labels.iter()) {
        if *s >= thr {
            if *l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let fn_ = n_pos - tp;
    f1_from_counts(tp, fp, fn_)
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 && (fp == 0 || fn_ == 0) && fp + fn_ > 0 {
        return 0.0;
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / denom as f64
}

/// Best F1 over the PR-curve thresholds, with the achieving threshold.
/// NaN when there is no positive label.
pub fn max_f1(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let n_pos = labels.iter().filter(|l| **l).count();
    if n_pos == 0 {
        return (f64::NAN, f64::NAN);
    }
    let curve = pr_curve(scores, labels);
    let mut best = 0.0;
    let mut best_thr = f64::INFINITY;
    for i in 0..curve.thresholds.len() {
        let p = curve.precision[i];
        let r = curve.recall[i];
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        if f1 > best {
            best = f1;
            best_thr = curve.thresholds[i];
        }
    }
    (best, best_thr)
}

/// Macro-averaged AP over per-sample score/label slices. Samples with no
/// positive label are skipped and counted.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MacroAp {
    pub mean_ap: f64,
    pub n_used: usize,
    pub n_skipped: usize,
}

pub fn macro_average_precision<'a, I>(samples: I) -> MacroAp
where
    I: IntoIterator<Item = (&'a [f64], &'a [bool])>,
{
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (scores, labels) in samples {
        let ap = average_precision(scores, labels);
        if ap.is_nan() {
            skipped += 1;
        } else {
            sum += ap;
            used += 1;
        }
    }
    let mean_ap = if used == 0 { f64::NAN } else { sum / used as f64 };
    MacroAp { mean_ap, n_used: used, n_skipped: skipped }
}
