//! Train-on-one-year, test-on-every-year transfer matrix.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{normalize, window_samples, FeatureSet, FireEventCube, NormStats, WindowSample};
use crate::folds::CrossYearPlan;
use crate::models::{load_checkpoint, FireModel, ModelConfig};
use crate::training::{evaluate, train_run, TrainConfig};
use crate::util::{indexed_parallel, mean};

use super::AnalysisError;

/// A cell (or whole row) of the matrix that could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub train_year: i32,
    /// `None` when training itself failed, i.e. the whole row is missing.
    pub test_year: Option<i32>,
    pub error: String,
}

/// AP of every train-year model on every test-year block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossYearMatrix {
    pub years: Vec<i32>,
    /// `cells[i][j]` is the test AP of the model trained on `years[i]`
    /// evaluated on the reserved block of `years[j]`; NaN marks a failure.
    pub cells: Vec<Vec<f64>>,
    pub row_means: Vec<f64>,
    pub col_means: Vec<f64>,
    pub failures: Vec<CellFailure>,
}

fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let finite: Vec<f64> = values.filter(|v| v.is_finite()).collect();
    mean(&finite)
}

impl CrossYearMatrix {
    /// Mean AP over the computable same-year cells.
    pub fn diagonal_mean(&self) -> f64 {
        finite_mean((0..self.years.len()).map(|i| self.cells[i][i]))
    }

    /// Mean AP over the computable transfer cells.
    pub fn off_diagonal_mean(&self) -> f64 {
        let n = self.years.len();
        finite_mean(
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| self.cells[i][j]),
        )
    }
}

type SampleIndex = BTreeMap<(i32, String, NaiveDate), WindowSample>;

fn index_samples(cubes: &[FireEventCube], t_window: usize) -> Result<SampleIndex, AnalysisError> {
    let mut index = SampleIndex::new();
    for cube in cubes {
        let features = FeatureSet::all(&cube.channel_schema);
        for sample in window_samples(cube, t_window, &features)? {
            index.insert((sample.year, sample.event_id.clone(), sample.target_date), sample);
        }
    }
    Ok(index)
}

fn collect(
    index: &SampleIndex,
    refs: &[crate::folds::SampleRef],
) -> Result<Vec<WindowSample>, AnalysisError> {
    refs.iter()
        .map(|r| {
            index
                .get(&(r.year, r.event_id.clone(), r.target_date))
                .cloned()
                .ok_or_else(|| AnalysisError::MissingSample {
                    year: r.year,
                    event_id: r.event_id.clone(),
                    date: r.target_date,
                })
        })
        .collect()
}

/// Trains one model per plan year on that year's capped sample set and
/// scores it on every year's reserved block, all validated against the one
/// shared validation set. Normalisation statistics are fit on each row's
/// training samples and reused for that row's evaluations. A failed row or
/// cell becomes NaN and is recorded in `failures` instead of aborting the
/// remaining matrix. With `workers > 1` the rows run concurrently and are
/// merged in year order. The matrix is also written to
/// `out_dir/matrix.json`.
pub fn cross_year_run(
    model_cfg: &ModelConfig,
    plan: &CrossYearPlan,
    cubes: &[FireEventCube],
    cfg: &TrainConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<CrossYearMatrix, AnalysisError> {
    if plan.years.len() < 2 {
        return Err(AnalysisError::TooFewYears { have: plan.years.len(), needed: 2 });
    }
    std::fs::create_dir_all(out_dir).map_err(|source| AnalysisError::Io {
        action: "create",
        path: out_dir.to_path_buf(),
        source,
    })?;
    let index = index_samples(cubes, model_cfg.t_window)?;
    let n = plan.years.len();

    let rows = indexed_parallel(n, workers, |i| {
        let train_year = plan.years[i];
        let mut row = vec![f64::NAN; n];
        let mut row_failures = Vec::new();
        let trained: Result<(FireModel<f32>, NormStats), String> = (|| {
            let refs = plan
                .train_sets
                .get(&train_year)
                .ok_or_else(|| format!("plan has no training set for {train_year}"))?;
            let mut train = collect(&index, refs).map_err(|e| e.to_string())?;
            let mut val = collect(&index, &plan.shared_val).map_err(|e| e.to_string())?;
            let stats = NormStats::fit(&train, &cubes[0].channel_schema);
            normalize(&mut train, &stats);
            normalize(&mut val, &stats);
            let run_dir = out_dir.join(format!("train_{train_year}"));
            let record =
                train_run(model_cfg, &train, &val, cfg, &run_dir).map_err(|e| e.to_string())?;
            let model = load_checkpoint(&record.best().path).map_err(|e| e.to_string())?;
            Ok((model, stats))
        })();
        let (model, stats) = match trained {
            Ok(pair) => pair,
            Err(error) => {
                row_failures.push(CellFailure { train_year, test_year: None, error });
                return (row, row_failures);
            }
        };

        for (j, &test_year) in plan.years.iter().enumerate() {
            let scored: Result<f64, String> = (|| {
                let refs = plan
                    .test_sets
                    .get(&test_year)
                    .ok_or_else(|| format!("plan has no test set for {test_year}"))?;
                let mut test = collect(&index, refs).map_err(|e| e.to_string())?;
                normalize(&mut test, &stats);
                evaluate(&model, &test).map(|m| m.ap).map_err(|e| e.to_string())
            })();
            match scored {
                Ok(ap) => row[j] = ap,
                Err(error) => {
                    row_failures.push(CellFailure {
                        train_year,
                        test_year: Some(test_year),
                        error,
                    });
                }
            }
        }
        (row, row_failures)
    });

    let mut cells = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (row, row_failures) in rows {
        cells.push(row);
        failures.extend(row_failures);
    }

    let row_means: Vec<f64> =
        (0..n).map(|i| finite_mean(cells[i].iter().copied())).collect();
    let col_means: Vec<f64> =
        (0..n).map(|j| finite_mean((0..n).map(|i| cells[i][j]))).collect();
    let matrix =
        CrossYearMatrix { years: plan.years.clone(), cells, row_means, col_means, failures };
    crate::training::write_json(&out_dir.join("matrix.json"), &matrix)?;
    Ok(matrix)
}
