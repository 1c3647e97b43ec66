//! Diagnostics over datasets and trained models: distribution-shift
//! reports, fire growth curves, performance-versus-size analysis, the
//! cross-year transfer experiment, dataset replication diffing, and
//! feature-embedding export.
//!
//! Every report here is deterministic given its seed and inputs, so two
//! invocations on the same data produce identical JSON artifacts.

mod crossyear;
mod diff;
mod domain;
mod embed;
mod size;

use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

use crate::data::DataError;
use crate::models::ModelError;
use crate::training::TrainError;

pub use crossyear::{cross_year_run, CellFailure, CrossYearMatrix};
pub use diff::{dataset_diff, BandDiff, DiffReport};
pub use domain::{
    domain_report, growth_curves, ChannelSummary, DomainReport, GrowthCurve, GrowthPoint,
    GrowthReport, Histogram, YearSummary,
};
pub use embed::embedding_export;
pub use size::{ap_vs_size, SizeBin, SizeReport};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no events given")]
    NoEvents,
    #[error("horizon must be at least 2, got {0}")]
    InvalidHorizon(usize),
    #[error("need at least {needed} events with positive size, got {have}")]
    TooFewSizedEvents { have: usize, needed: usize },
    #[error("need at least {needed} years, got {have}")]
    TooFewYears { have: usize, needed: usize },
    #[error("events disagree on the channel schema (`{0}` differs)")]
    InconsistentSchema(String),
    #[error("schemas differ between datasets: {0}")]
    SchemaMismatch(String),
    #[error("no common events; only in first: [{}], only in second: [{}]",
        only_a.join(", "), only_b.join(", "))]
    DisjointEvents { only_a: Vec<String>, only_b: Vec<String> },
    #[error("sample {year}/{event_id}/{date} is not present in the dataset")]
    MissingSample { year: i32, event_id: String, date: NaiveDate },
    #[error("failed to {action} {path}: {source}")]
    Io {
        action: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}
