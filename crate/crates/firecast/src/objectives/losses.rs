//! Segmentation losses over logit maps, with analytic gradients.
//!
//! All four losses share the same calling convention: a logit map, a binary
//! target map, and a validity mask. Invalid pixels contribute neither to the
//! value nor to the gradient. An all-invalid mask yields a NaN value and a
//! zero gradient (logged as a warning) so the caller can detect and skip it.

use ndarray::{Array2, ArrayView2, NdFloat};
use serde::{Deserialize, Serialize};

use super::ObjectiveError;
use crate::data::WindowSample;

/// Loss value and its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LossGrad<F> {
    pub value: F,
    pub grad: Array2<F>,
}

/// Focal loss hyperparameters: `alpha` weights the positive class,
/// `gamma` is the focusing exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl FocalConfig {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self, ObjectiveError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ObjectiveError::FocalAlphaOutOfRange(alpha));
        }
        if gamma < 0.0 {
            return Err(ObjectiveError::FocalGammaNegative(gamma));
        }
        Ok(Self { alpha, gamma })
    }
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { alpha: 0.5, gamma: 2.0 }
    }
}

/// Which loss a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Focal,
    Dice,
    Jaccard,
}

/// A fully resolved loss function (kind plus hyperparameters).
#[derive(Debug, Clone, Copy)]
pub enum LossFn {
    Bce { pos_weight: f64 },
    Focal(FocalConfig),
    Dice { eps: f64 },
    Jaccard { eps: f64 },
}

impl LossFn {
    pub fn evaluate<F: NdFloat>(
        &self,
        logits: ArrayView2<F>,
        target: ArrayView2<F>,
        valid: ArrayView2<bool>,
    ) -> LossGrad<F> {
        let f = |x: f64| F::from(x).unwrap();
        match *self {
            LossFn::Bce { pos_weight } => bce_loss(logits, target, valid, f(pos_weight)),
            LossFn::Focal(cfg) => focal_loss(logits, target, valid, cfg),
            LossFn::Dice { eps } => dice_loss(logits, target, valid, f(eps)),
            LossFn::Jaccard { eps } => jaccard_loss(logits, target, valid, f(eps)),
        }
    }
}

fn softplus<F: NdFloat>(x: F) -> F {
    // max(x, 0) + ln(1 + exp(-|x|)), stable for large |x|
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<F: NdFloat>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn check_shapes<F: NdFloat>(
    logits: &ArrayView2<F>,
    target: &ArrayView2<F>,
    valid: &ArrayView2<bool>,
) {
    assert_eq!(logits.dim(), target.dim(), "logits/target shape mismatch");
    assert_eq!(logits.dim(), valid.dim(), "logits/valid shape mismatch");
}

fn empty_mask_result<F: NdFloat>(shape: (usize, usize)) -> LossGrad<F> {
    log::warn!("loss evaluated on an all-invalid mask; returning NaN");
    LossGrad { value: F::nan(), grad: Array2::zeros(shape) }
}

/// Weighted binary cross-entropy: mean over valid pixels of
/// `-[w*y*log p + (1-y)*log(1-p)]` with `p = sigmoid(logit)`.
pub fn bce_loss<F: NdFloat>(
    logits: ArrayView2<F>,
    target: ArrayView2<F>,
    valid: ArrayView2<bool>,
    pos_weight: F,
) -> LossGrad<F> {
    check_shapes(&logits, &target, &valid);
    let n = valid.iter().filter(|v| **v).count();
    if n == 0 {
        return empty_mask_result(logits.dim());
    }
    let inv_n = F::one() / F::from(n).unwrap();
    let mut grad = Array2::zeros(logits.dim());
    let mut total = F::zero();
    for ((idx, &s), (&y, &ok)) in logits.indexed_iter().zip(target.iter().zip(valid.iter())) {
        if !ok {
            continue;
        }
        let p = sigmoid(s);
        // -y*log p = y*softplus(-s); -(1-y)*log(1-p) = (1-y)*softplus(s)
        total = total + pos_weight * y * softplus(-s) + (F::one() - y) * softplus(s);
        grad[idx] = ((F::one() - y) * p - pos_weight * y * (F::one() - p)) * inv_n;
    }
    LossGrad { value: total * inv_n, grad }
}

/// Focal loss: mean over valid pixels of `-alpha_t (1-p_t)^gamma log p_t`,
/// where `p_t = p` and `alpha_t = alpha` for positives, and their
/// complements for negatives.
pub fn focal_loss<F: NdFloat>(
    logits: ArrayView2<F>,
    target: ArrayView2<F>,
    valid: ArrayView2<bool>,
    cfg: FocalConfig,
) -> LossGrad<F> {
    check_shapes(&logits, &target, &valid);
    let n = valid.iter().filter(|v| **v).count();
    if n == 0 {
        return empty_mask_result(logits.dim());
    }
    let alpha = F::from(cfg.alpha).unwrap();
    let gamma = F::from(cfg.gamma).unwrap();
    let one = F::one();
    let inv_n = one / F::from(n).unwrap();
    let mut grad = Array2::zeros(logits.dim());
    let mut total = F::zero();
    for ((idx, &s), (&y, &ok)) in logits.indexed_iter().zip(target.iter().zip(valid.iter())) {
        if !ok {
            continue;
        }
        let p = sigmoid(s);
        let log_p = -softplus(-s);
        let log_q = -softplus(s);
        let (value, dval) = if y > F::from(0.5).unwrap() {
            let focus = (one - p).powf(gamma);
            let v = -alpha * focus * log_p;
            // d/ds [-a (1-p)^g log p] = a (1-p)^g [g p log p - (1-p)]
            let d = alpha * focus * (gamma * p * log_p - (one - p));
            (v, d)
        } else {
            let focus = p.powf(gamma);
            let v = -(one - alpha) * focus * log_q;
            let d = (one - alpha) * focus * (p - gamma * (one - p) * log_q);
            (v, d)
        };
        total = total + value;
        grad[idx] = dval * inv_n;
    }
    LossGrad { value: total * inv_n, grad }
}

/// Soft Dice and Jaccard overlap terms over valid pixels:
/// intersection `I = sum(p*y)`, mass `S = sum(p) + sum(y)`.
fn overlap_sums<F: NdFloat>(
    logits: ArrayView2<F>,
    target: ArrayView2<F>,
    valid: ArrayView2<bool>,
) -> (F, F, Array2<F>, usize) {
    let mut inter = F::zero();
    let mut mass = F::zero();
    let mut probs = Array2::zeros(logits.dim());
    let mut n = 0usize;
    for ((idx, &s), (&y, &ok)) in logits.indexed_iter().zip(target.iter().zip(valid.iter())) {
        if !ok {
            continue;
        }
        n += 1;
        let p = sigmoid(s);
        probs[idx] = p;
        inter = inter + p * y;
        mass = mass + p + y;
    }
    (inter, mass, probs, n)
}

/// Dice coefficient `2I / S` at `eps = 0`; NaN on an empty mask.
pub fn dice_coefficient<F: NdFloat>(
    logits: ArrayView2<F>,
    target: ArrayView2<F>,
    valid: ArrayView2<bool>,
) -> F {
    let (inter, mass, _, n) = overlap_sums(logits, target, valid);
    if n == 0 {
        return F::nan();
    }
    (inter + inter) / mass
}

/// Jaccard coefficient `I / (S - I)` at `eps = 0`; NaN on an empty mask.
pub fn jaccard_coefficient<F: NdFloat>(
    logits: ArrayView2<F>,
    target: ArrayView2<F>,
    valid: ArrayView2<bool>,
) -> F {
    let (inter, mass, _, n) = overlap_sums(logits, target, valid);
    if n == 0 {
        return F::nan();
    }
    inter / (mass - inter)
}

/// Dice loss: `1 - (2I + eps) / (S + eps)`.
pub fn dice_loss<F: NdFloat>(
    logits: ArrayView2<F>,
    target: ArrayView2<F>,
    valid: ArrayView2<bool>,
    eps: F,
) -> LossGrad<F> {
    check_shapes(&logits, &target, &valid);
    let (inter, mass, probs, n) = overlap_sums(logits, target, valid);
    if n == 0 {
        return empty_mask_result(logits.dim());
    }
    let two = F::from(2.0).unwrap();
    let num = two * inter + eps;
    let den = mass + eps;
    let value = F::one() - num / den;
    let mut grad = Array2::zeros(logits.dim());
    for ((idx, &y), &ok) in target.indexed_iter().zip(valid.iter()) {
        if !ok {
            continue;
        }
        let p = probs[idx];
        // d/dp of num/den with dI/dp = y, dS/dp = 1
        let dratio = (two * y * den - num) / (den * den);
        grad[idx] = -dratio * p * (F::one() - p);
    }
    LossGrad { value, grad }
}

/// Jaccard loss: `1 - (I + eps) / (U + eps)` with union `U = S - I`.
pub fn jaccard_loss<F: NdFloat>(
    logits: ArrayView2<F>,
    target: ArrayView2<F>,
    valid: ArrayView2<bool>,
    eps: F,
) -> LossGrad<F> {
    check_shapes(&logits, &target, &valid);
    let (inter, mass, probs, n) = overlap_sums(logits, target, valid);
    if n == 0 {
        return empty_mask_result(logits.dim());
    }
    let num = inter + eps;
    let den = mass - inter + eps;
    let value = F::one() - num / den;
    let mut grad = Array2::zeros(logits.dim());
    for ((idx, &y), &ok) in target.indexed_iter().zip(valid.iter()) {
        if !ok {
            continue;
        }
        let p = probs[idx];
        // dI/dp = y, dU/dp = 1 - y
        let dratio = (y * den - num * (F::one() - y)) / (den * den);
        grad[idx] = -dratio * p * (F::one() - p);
    }
    LossGrad { value, grad }
}

/// Focal alpha from training prevalence: the negative-class frequency
/// `1 - prevalence`, clipped to (0.01, 0.99). Prevalence is the positive
/// fraction over all valid target pixels of the training samples.
pub fn alpha_from_prevalence(samples: &[WindowSample]) -> f64 {
    let mut pos = 0u64;
    let mut total = 0u64;
    for s in samples {
        for (&y, &ok) in s.target.iter().zip(s.valid.iter()) {
            if ok {
                total += 1;
                if y > 0.5 {
                    pos += 1;
                }
            }
        }
    }
    let prevalence = if total == 0 { 0.0 } else { pos as f64 / total as f64 };
    (1.0 - prevalence).clamp(0.01, 0.99)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn all_valid(r: usize, c: usize) -> Array2<bool> {
        Array2::from_elem((r, c), true)
    }

    #[test]
    fn bce_single_pixel_analytic() {
        // y = 1, p = 0.5, w = 1 -> ln 2
        let logits = array![[0.0f64]];
        let target = array![[1.0f64]];
        let valid = all_valid(1, 1);
        let out = bce_loss(logits.view(), target.view(), valid.view(), 1.0);
        assert_abs_diff_eq!(out.value, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        // confident correct logits keep the loss below -ln(1 - eps) for eps from the logit scale
        let logits = array![[20.0f64, -20.0]];
        let target = array![[1.0f64, 0.0]];
        let valid = all_valid(1, 2);
        let out = bce_loss(logits.view(), target.view(), valid.view(), 1.0);
        assert!(out.value < 1e-8);
    }

    #[test]
    fn bce_hand_computed_fixture() {
        // 4 pixels, hand-summed: pixels (y, s): (1, 0.3), (0, -0.2), (1, -1.0), (0, 2.0), w = 2
        let logits = array![[0.3f64, -0.2], [-1.0, 2.0]];
        let target = array![[1.0f64, 0.0], [1.0, 0.0]];
        let valid = all_valid(2, 2);
        let w = 2.0;
        let sp = |x: f64| (1.0 + (-x.abs()).exp()).ln() + x.max(0.0);
        let expect = (w * sp(-0.3) + sp(-0.2) + w * sp(1.0) + sp(2.0)) / 4.0;
        let out = bce_loss(logits.view(), target.view(), valid.view(), w);
        assert_abs_diff_eq!(out.value, expect, epsilon = 1e-12);
    }

    #[test]
    fn bce_empty_mask_is_nan_with_zero_grad() {
        let logits = array![[0.0f64]];
        let target = array![[1.0f64]];
        let valid = array![[false]];
        let out = bce_loss(logits.view(), target.view(), valid.view(), 1.0);
        assert!(out.value.is_nan());
        assert_eq!(out.grad[[0, 0]], 0.0);
    }

    #[test]
    fn focal_hand_value() {
        // y = 1, p = 0.5, alpha = 0.25, gamma = 2 -> 0.25 * 0.25 * ln 2
        let logits = array![[0.0f64]];
        let target = array![[1.0f64]];
        let valid = all_valid(1, 1);
        let cfg = FocalConfig::new(0.25, 2.0).unwrap();
        let out = focal_loss(logits.view(), target.view(), valid.view(), cfg);
        assert_abs_diff_eq!(out.value, 0.25 * 0.25 * std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn focal_gamma_zero_reduces_to_half_bce() {
        let logits = array![[0.7f64, -1.3], [0.1, 2.4]];
        let target = array![[1.0f64, 0.0], [0.0, 1.0]];
        let valid = all_valid(2, 2);
        let cfg = FocalConfig::new(0.5, 0.0).unwrap();
        let focal = focal_loss(logits.view(), target.view(), valid.view(), cfg);
        let bce = bce_loss(logits.view(), target.view(), valid.view(), 1.0);
        assert_abs_diff_eq!(focal.value, 0.5 * bce.value, epsilon = 1e-12);
        for (g_f, g_b) in focal.grad.iter().zip(bce.grad.iter()) {
            assert_abs_diff_eq!(*g_f, 0.5 * *g_b, epsilon = 1e-12);
        }
    }

    #[test]
    fn focal_vanishes_for_confident_positive() {
        let logits = array![[30.0f64]];
        let target = array![[1.0f64]];
        let valid = all_valid(1, 1);
        let cfg = FocalConfig::default();
        let out = focal_loss(logits.view(), target.view(), valid.view(), cfg);
        assert!(out.value.abs() < 1e-12);
    }

    #[test]
    fn dice_and_jaccard_hand_values() {
        // y = [1,1,0,0], p = 0.5 everywhere -> dice 0.5, jaccard 2/3 at eps -> 0
        let logits = array![[0.0f64, 0.0, 0.0, 0.0]];
        let target = array![[1.0f64, 1.0, 0.0, 0.0]];
        let valid = all_valid(1, 4);
        let d = dice_loss(logits.view(), target.view(), valid.view(), 0.0);
        let j = jaccard_loss(logits.view(), target.view(), valid.view(), 0.0);
        assert_abs_diff_eq!(d.value, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(j.value, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn dice_and_jaccard_perfect_overlap() {
        let logits = array![[40.0f64, -40.0], [40.0, -40.0]];
        let target = array![[1.0f64, 0.0], [1.0, 0.0]];
        let valid = all_valid(2, 2);
        let d = dice_loss(logits.view(), target.view(), valid.view(), 1e-9);
        let j = jaccard_loss(logits.view(), target.view(), valid.view(), 1e-9);
        assert!(d.value.abs() < 1e-6);
        assert!(j.value.abs() < 1e-6);
    }

    #[test]
    fn dice_and_jaccard_disjoint_supports() {
        let logits = array![[40.0f64, -40.0]];
        let target = array![[0.0f64, 1.0]];
        let valid = all_valid(1, 2);
        let d = dice_loss(logits.view(), target.view(), valid.view(), 1e-9);
        let j = jaccard_loss(logits.view(), target.view(), valid.view(), 1e-9);
        assert!((d.value - 1.0).abs() < 1e-6);
        assert!((j.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn jaccard_from_dice_coefficient_identity() {
        let logits = array![[0.4f64, -0.8, 1.2], [0.0, 2.0, -1.5]];
        let target = array![[1.0f64, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let valid = all_valid(2, 3);
        let d: f64 = dice_coefficient(logits.view(), target.view(), valid.view());
        let j: f64 = jaccard_coefficient(logits.view(), target.view(), valid.view());
        assert_abs_diff_eq!(j, d / (2.0 - d), epsilon = 1e-12);
    }

    #[test]
    fn focal_config_rejects_bad_params() {
        assert!(FocalConfig::new(0.0, 2.0).is_err());
        assert!(FocalConfig::new(1.0, 2.0).is_err());
        assert!(FocalConfig::new(0.5, -0.1).is_err());
        assert!(FocalConfig::new(0.5, 0.0).is_ok());
    }

    #[test]
    fn alpha_clip_rules() {
        // directly check the clipping rule on synthetic prevalence values
        // via tiny hand-built samples
        use crate::data::WindowSample;
        use chrono::NaiveDate;
        use ndarray::{Array2, Array4};

        let mk = |positives: usize, total: usize| -> WindowSample {
            let mut target = Array2::zeros((1, total));
            for i in 0..positives {
                target[[0, i]] = 1.0;
            }
            WindowSample {
                event_id: "e".into(),
                year: 2020,
                target_date: NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(),
                inputs: Array4::zeros((1, 1, 1, total)),
                input_valid: ndarray::Array3::from_elem((1, 1, total), true),
                target,
                valid: Array2::from_elem((1, total), true),
                day_of_year: vec![182],
                prevalence: positives as f64 / total as f64,
                fire_channel: 0,
            }
        };

        assert_abs_diff_eq!(alpha_from_prevalence(&[mk(1, 20)]), 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha_from_prevalence(&[mk(10, 20)]), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha_from_prevalence(&[mk(0, 20)]), 0.99, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha_from_prevalence(&[mk(20, 20)]), 0.01, epsilon = 1e-12);
    }
}
