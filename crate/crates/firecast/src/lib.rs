//! Next-day wildfire spread prediction pipeline.
//!
//! The crate covers the full desk-scale experiment loop:
//!
//! * [`data`] — raster dataset model, on-disk layout, sliding-window sample
//!   extraction and feature selection;
//! * [`synth`] — a stochastic cellular-automaton fire generator that writes
//!   datasets in the same layout, with controllable cross-year covariate and
//!   concept shift;
//! * [`folds`] — cross-validation protocols (leave-one-year-out, paired-block,
//!   random event folds, per-year cross-year splits);
//! * [`objectives`] — segmentation losses with analytic gradients and the
//!   evaluation metrics (average precision, F1, Wilcoxon signed-rank);
//! * [`nn`] / [`models`] — a small CPU tensor layer set with hand-written
//!   backward passes, and the model zoo built on it: single-day
//!   encoder/decoder networks, data-level fusion, and feature-level fusion
//!   with temporal attention;
//! * [`training`] — deterministic training loop, AdamW, checkpoint selection,
//!   grid search and fold-plan benchmarks;
//! * [`analysis`] — domain-shift diagnostics, cross-year experiment driver,
//!   fire-size analyses, dataset diffing and embedding export.

pub mod analysis;
pub mod data;
pub mod folds;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod synth;
pub mod training;
pub mod util;
