//! Deterministic training: the optimization loop, checkpoint selection by
//! validation metric, grid search, and benchmark execution over fold plans.
//!
//! Every run is reproducible from its seed: model initialization, per-epoch
//! shuffling, and batching all derive from [`TrainConfig::seed`], so two runs
//! with the same config and data produce byte-identical checkpoints. Each
//! evaluation logs both validation AP and validation max-F1, which lets a
//! finished run answer "what would the other selection rule have picked"
//! without retraining.

mod bench;
mod optimizer;
mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::models::ModelError;
use crate::objectives::LossKind;

pub use bench::{
    run_benchmark, run_fold, write_fold_csv, EvalReport, EventScore, FoldFailure, FoldResult,
};
pub use bench::{grid_search, GridEntry, GridReport, GridSpec};
pub use optimizer::AdamW;
pub use run::{evaluate, resolve_loss, train_run};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid {field}: {detail}")]
    InvalidConfig { field: &'static str, detail: String },
    #[error("{0} split has no samples")]
    EmptySplit(&'static str),
    #[error("loss became non-finite at step {step} (parameter norm {param_norm:.6e})")]
    NanLoss { step: usize, param_norm: f64 },
    #[error("no evaluation was logged")]
    NoEvaluations,
    #[error("grid axis {0} is empty")]
    EmptyGrid(&'static str),
    #[error("all {0} folds failed")]
    AllFoldsFailed(usize),
    #[error("failed to {action} {path}: {source}")]
    Io {
        action: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Which validation metric decides the best checkpoint of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    Ap,
    F1,
}

/// Hyperparameters of one training run. `iterations` counts optimizer
/// steps, not epochs; batches wrap across epoch boundaries so every step
/// consumes exactly `batch_size` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub selection_metric: SelectionMetric,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: small enough to finish on one core in minutes.
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            loss: LossKind::Focal,
            selection_metric: SelectionMetric::Ap,
            seed: 0,
            eval_every: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field: &'static str, detail: String| TrainError::InvalidConfig { field, detail };
        if self.iterations == 0 {
            return Err(bad("iterations", "must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(bad("learning_rate", format!("must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(bad("weight_decay", format!("must be non-negative, got {}", self.weight_decay)));
        }
        if self.eval_every == 0 {
            return Err(bad("eval_every", "must be at least 1".into()));
        }
        Ok(())
    }
}

/// Validation metrics logged after one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub val_ap: f64,
    pub val_f1: f64,
}

/// Pooled average precision and max-F1 over the valid pixels of a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub ap: f64,
    pub f1: f64,
}

/// One saved checkpoint and the validation value that earned it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointChoice {
    pub step: usize,
    pub value: f64,
    pub path: PathBuf,
}

/// Everything a finished run needs to be audited or resumed: the configs
/// it ran with, the full evaluation trace, and the best checkpoint under
/// each selection rule. `test` stays `None` until a benchmark evaluates
/// the selected checkpoint on held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_fingerprint: String,
    pub model_config: crate::models::ModelConfig,
    pub train_config: TrainConfig,
    pub evals: Vec<EvalPoint>,
    pub best_by_ap: CheckpointChoice,
    pub best_by_f1: CheckpointChoice,
    pub wall_seconds: f64,
    pub test: Option<EvalMetrics>,
}

impl RunRecord {
    /// The checkpoint chosen by this run's own selection metric.
    pub fn best(&self) -> &CheckpointChoice {
        select_checkpoint(self, self.train_config.selection_metric)
    }
}

/// The checkpoint maximizing the named validation metric. Both metrics are
/// logged at every evaluation, so either answer comes from one record.
pub fn select_checkpoint(record: &RunRecord, metric: SelectionMetric) -> &CheckpointChoice {
    match metric {
        SelectionMetric::Ap => &record.best_by_ap,
        SelectionMetric::F1 => &record.best_by_f1,
    }
}

/// Index of the best evaluation in a trace: highest value, earliest on
/// ties. NaN values lose to any real value.
pub fn best_eval(evals: &[EvalPoint], metric: SelectionMetric) -> Option<usize> {
    let value = |e: &EvalPoint| match metric {
        SelectionMetric::Ap => e.val_ap,
        SelectionMetric::F1 => e.val_f1,
    };
    let mut best: Option<usize> = None;
    for (i, e) in evals.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if improves(value(e), value(&evals[b])) => best = Some(i),
            Some(_) => {}
        }
    }
    best
}

/// Strict improvement: ties keep the incumbent, and NaN never wins except
/// over another NaN incumbent.
pub(crate) fn improves(candidate: f64, incumbent: f64) -> bool {
    (incumbent.is_nan() && !candidate.is_nan()) || candidate > incumbent
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TrainError> {
    let io = |action: &'static str| {
        move |source: std::io::Error| TrainError::Io { action, path: path.to_path_buf(), source }
    };
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(io("write"))
}
