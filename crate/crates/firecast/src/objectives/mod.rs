//! Training objectives and evaluation metrics.
//!
//! Losses are evaluated from logits with numerically stable log-sigmoid
//! formulations and return analytic gradients with respect to the logits;
//! the probability-space formulas in the docs are the semantic contract.
//! Metrics operate on flat score/label lists so callers decide how pixels
//! are pooled.

mod losses;
mod metrics;
mod wilcoxon;

pub use losses::{
    alpha_from_prevalence, bce_loss, dice_coefficient, dice_loss, focal_loss, jaccard_coefficient,
    jaccard_loss, FocalConfig, LossFn, LossGrad, LossKind,
};
pub use metrics::{
    average_precision, f1_at_threshold, macro_average_precision, max_f1, pr_curve, MacroAp, PRCurve,
};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("focal alpha must lie in (0,1), got {0}")]
    FocalAlphaOutOfRange(f64),
    #[error("focal gamma must be >= 0, got {0}")]
    FocalGammaNegative(f64),
    #[error("paired samples have different lengths: {0} vs {1}")]
    PairedLengthMismatch(usize, usize),
}
