//! Grid search over training hyperparameters and benchmark execution over
//! fold plans.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    normalize, persistence_scores, window_samples, FeatureSet, FireEventCube, NormStats,
    WindowSample,
};
use crate::folds::FoldPlan;
use crate::models::{load_checkpoint, ModelConfig, ModelInput};
use crate::objectives::{average_precision, max_f1, LossKind};
use crate::util::{indexed_parallel, mean, sample_std};

use super::run::train_run;
use super::{write_json, EvalMetrics, TrainConfig, TrainError};

/// The axes of a hyperparameter sweep; every combination is one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub losses: Vec<LossKind>,
    /// `true` entries warm-start from the checkpoint named by the model
    /// config template; `false` entries train from scratch.
    pub pretraining: Vec<bool>,
}

impl GridSpec {
    /// The full sweep: five learning-rate decades, all four losses, with
    /// and without a pretrained encoder. 40 combinations.
    pub fn standard() -> Self {
        Self {
            learning_rates: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
            losses: vec![LossKind::Bce, LossKind::Focal, LossKind::Dice, LossKind::Jaccard],
            pretraining: vec![false, true],
        }
    }

    /// Cartesian product in a fixed order: learning rate outermost,
    /// pretraining innermost.
    pub fn combinations(&self) -> Vec<(f64, LossKind, bool)> {
        let mut out = Vec::with_capacity(
            self.learning_rates.len() * self.losses.len() * self.pretraining.len(),
        );
        for &lr in &self.learning_rates {
            for &loss in &self.losses {
                for &pre in &self.pretraining {
                    out.push((lr, loss, pre));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rates.is_empty() {
            return Err(TrainError::EmptyGrid("learning_rates"));
        }
        if self.losses.is_empty() {
            return Err(TrainError::EmptyGrid("losses"));
        }
        if self.pretraining.is_empty() {
            return Err(TrainError::EmptyGrid("pretraining"));
        }
        Ok(())
    }
}

/// One grid point and how its run went. Failed runs keep their slot with
/// the error message instead of metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridEntry {
    pub learning_rate: f64,
    pub loss: LossKind,
    pub pretraining: bool,
    pub run_dir: PathBuf,
    pub best_val_ap: Option<f64>,
    pub best_val_f1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub fold_id: usize,
    /// Ranked by best validation AP, descending; failures sort last.
    pub entries: Vec<GridEntry>,
    pub completed: usize,
    pub failed: usize,
}

struct FoldData {
    train: Vec<WindowSample>,
    val: Vec<WindowSample>,
    test: Vec<WindowSample>,
}

/// Split per the plan, window every cube, and normalize all three splits
/// with statistics fitted on the training split only.
fn prepare_fold(
    plan: &FoldPlan,
    cubes: &[FireEventCube],
    t_window: usize,
) -> Result<FoldData, TrainError> {
    let (train_c, val_c, test_c) = plan.split(cubes);
    if train_c.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let schema = train_c[0].channel_schema.clone();
    let features = FeatureSet::all(&schema);
    let collect = |cs: &[&FireEventCube]| -> Result<Vec<WindowSample>, TrainError> {
        let mut out = Vec::new();
        for c in cs {
            out.extend(window_samples(c, t_window, &features)?);
        }
        Ok(out)
    };
    let mut train = collect(&train_c)?;
    let mut val = collect(&val_c)?;
    let mut test = collect(&test_c)?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    if test.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let stats = NormStats::fit(&train, &schema);
    normalize(&mut train, &stats);
    normalize(&mut val, &stats);
    normalize(&mut test, &stats);
    Ok(FoldData { train, val, test })
}

/// One training run per grid combination, all on the same fold, ranked by
/// best validation AP. A failed run is recorded and the sweep continues.
/// With `workers > 1` the combinations run concurrently and are merged in
/// grid order.
pub fn grid_search(
    template: &ModelConfig,
    grid: &GridSpec,
    plan: &FoldPlan,
    cubes: &[FireEventCube],
    base: &TrainConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<GridReport, TrainError> {
    grid.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        action: "create",
        path: out_dir.to_path_buf(),
        source,
    })?;
    let data = prepare_fold(plan, cubes, template.t_window)?;

    let combos = grid.combinations();
    let mut entries = indexed_parallel(combos.len(), workers, |i| {
        let (lr, loss, pre) = combos[i];
        let run_dir = out_dir.join(format!("run_{i:03}"));
        let mut model_cfg = template.clone();
        if !pre {
            model_cfg.checkpoint_path = None;
        }
        let mut cfg = base.clone();
        cfg.learning_rate = lr;
        cfg.loss = loss;
        let outcome = if pre && template.checkpoint_path.is_none() {
            Err("pretraining requested but the model config names no checkpoint".to_string())
        } else {
            train_run(&model_cfg, &data.train, &data.val, &cfg, &run_dir)
                .map_err(|e| e.to_string())
        };
        match outcome {
            Ok(record) => GridEntry {
                learning_rate: lr,
                loss,
                pretraining: pre,
                run_dir,
                best_val_ap: Some(record.best_by_ap.value),
                best_val_f1: Some(record.best_by_f1.value),
                error: None,
            },
            Err(error) => GridEntry {
                learning_rate: lr,
                loss,
                pretraining: pre,
                run_dir,
                best_val_ap: None,
                best_val_f1: None,
                error: Some(error),
            },
        }
    });

    let rank = |e: &GridEntry| match e.best_val_ap {
        Some(v) if v.is_finite() => v,
        _ => f64::NEG_INFINITY,
    };
    entries.sort_by(|a, b| rank(b).partial_cmp(&rank(a)).unwrap());
    let completed = entries.iter().filter(|e| e.error.is_none()).count();
    let report = GridReport {
        fold_id: plan.fold_id,
        failed: entries.len() - completed,
        completed,
        entries,
    };
    write_json(&out_dir.join("grid.json"), &report)?;
    Ok(report)
}

/// Test metrics of one event, with its size for size-stratified analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventScore {
    pub event_id: String,
    pub year: i32,
    pub ap: f64,
    /// Positive valid target pixels summed over the event's samples.
    pub fire_size: u64,
}

/// Held-out metrics of one completed fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_id: usize,
    pub test_years: Vec<i32>,
    pub ap: f64,
    pub f1: f64,
    pub baseline_ap: f64,
    pub per_year: BTreeMap<i32, f64>,
    pub per_event: Vec<EventScore>,
    pub params: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold_id: usize,
    pub error: String,
}

/// Benchmark results over a set of fold plans. Aggregates cover completed
/// folds only; `partial` marks that some folds failed and `single_fold`
/// marks a degenerate standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_ap: f64,
    pub std_ap: f64,
    pub baseline_mean_ap: f64,
    pub single_fold: bool,
    pub partial: bool,
    pub per_year: BTreeMap<i32, f64>,
    pub parameter_count: usize,
    pub folds: Vec<FoldResult>,
    pub failures: Vec<FoldFailure>,
    pub wall_seconds: f64,
}

impl EvalReport {
    /// The report with every timing field removed, so repeated runs of the
    /// same config compare byte-for-byte.
    pub fn metrics_value(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("serializable report");
        strip_timing(&mut v);
        v
    }
}

fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove("seconds");
            map.remove("wall_seconds");
            for val in map.values_mut() {
                strip_timing(val);
            }
        }
        serde_json::Value::Array(items) => {
            for val in items {
                strip_timing(val);
            }
        }
        _ => {}
    }
}

/// Train on one fold plan and score the selected checkpoint on its test
/// split, pooled and broken down by year and by event.
pub fn run_fold(
    model_cfg: &ModelConfig,
    plan: &FoldPlan,
    cubes: &[FireEventCube],
    cfg: &TrainConfig,
    fold_dir: &Path,
) -> Result<FoldResult, TrainError> {
    let data = prepare_fold(plan, cubes, model_cfg.t_window)?;
    let mut record = train_run(model_cfg, &data.train, &data.val, cfg, fold_dir)?;
    let model = load_checkpoint(&record.best().path)?;

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut base_scores = Vec::new();
    let mut by_year: BTreeMap<i32, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    let mut by_event: BTreeMap<(i32, String), (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for s in &data.test {
        let proba = model.predict_proba(&ModelInput::from_sample(s))?;
        let persist = persistence_scores(s);
        for (((&p, &pb), &y), &ok) in
            proba.iter().zip(persist.iter()).zip(s.target.iter()).zip(s.valid.iter())
        {
            if !ok {
                continue;
            }
            let label = y > 0.5;
            scores.push(p as f64);
            labels.push(label);
            base_scores.push(pb as f64);
            let ye = by_year.entry(s.year).or_default();
            ye.0.push(p as f64);
            ye.1.push(label);
            let ev = by_event.entry((s.year, s.event_id.clone())).or_default();
            ev.0.push(p as f64);
            ev.1.push(label);
        }
    }
    let ap = average_precision(&scores, &labels);
    let (f1, _) = max_f1(&scores, &labels);
    let baseline_ap = average_precision(&base_scores, &labels);
    let per_year =
        by_year.iter().map(|(&y, (s, l))| (y, average_precision(s, l))).collect();
    let per_event = by_event
        .into_iter()
        .map(|((year, event_id), (s, l))| EventScore {
            event_id,
            year,
            ap: average_precision(&s, &l),
            fire_size: l.iter().filter(|x| **x).count() as u64,
        })
        .collect();

    record.test = Some(EvalMetrics { ap, f1 });
    write_json(&fold_dir.join("record.json"), &record)?;

    Ok(FoldResult {
        fold_id: plan.fold_id,
        test_years: plan.test_years.clone(),
        ap,
        f1,
        baseline_ap,
        per_year,
        per_event,
        params: model.parameter_count(),
        seconds: 0.0,
    })
}

/// Train and evaluate one run per fold plan, then aggregate. Failed folds
/// are recorded and skipped; it is an error only when every fold fails.
/// With `workers > 1` the folds run concurrently; results are merged in
/// plan order, so the report does not depend on scheduling.
///
/// Writes `report.json` (full), `metrics.json` (timing stripped, byte
/// stable across reruns), and `folds.csv` into `out_dir`.
pub fn run_benchmark(
    model_cfg: &ModelConfig,
    plans: &[FoldPlan],
    cubes: &[FireEventCube],
    cfg: &TrainConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<EvalReport, TrainError> {
    if plans.is_empty() {
        return Err(TrainError::InvalidConfig {
            field: "plans",
            detail: "no fold plans given".into(),
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        action: "create",
        path: out_dir.to_path_buf(),
        source,
    })?;
    let started = Instant::now();

    let outcomes = indexed_parallel(plans.len(), workers, |i| {
        let plan = &plans[i];
        let fold_started = Instant::now();
        let fold_dir = out_dir.join(format!("fold_{:02}", plan.fold_id));
        match run_fold(model_cfg, plan, cubes, cfg, &fold_dir) {
            Ok(mut fold) => {
                fold.seconds = fold_started.elapsed().as_secs_f64();
                Ok(fold)
            }
            Err(e) => Err(FoldFailure { fold_id: plan.fold_id, error: e.to_string() }),
        }
    });
    let mut folds: Vec<FoldResult> = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(fold) => folds.push(fold),
            Err(failure) => failures.push(failure),
        }
    }
    if folds.is_empty() {
        return Err(TrainError::AllFoldsFailed(plans.len()));
    }

    let aps: Vec<f64> = folds.iter().map(|f| f.ap).collect();
    let baseline: Vec<f64> = folds.iter().map(|f| f.baseline_ap).collect();
    let mut per_year_acc: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for f in &folds {
        for (&y, &ap) in &f.per_year {
            per_year_acc.entry(y).or_default().push(ap);
        }
    }
    let report = EvalReport {
        mean_ap: mean(&aps),
        std_ap: sample_std(&aps),
        baseline_mean_ap: mean(&baseline),
        single_fold: folds.len() == 1,
        partial: !failures.is_empty(),
        per_year: per_year_acc.into_iter().map(|(y, v)| (y, mean(&v))).collect(),
        parameter_count: folds[0].params,
        folds,
        failures,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&out_dir.join("report.json"), &report)?;
    write_json(&out_dir.join("metrics.json"), &report.metrics_value())?;
    write_fold_csv(&report, &out_dir.join("folds.csv"))?;
    Ok(report)
}

/// Per-fold metrics as CSV, one row per completed fold. Multiple test
/// years of one fold are joined with `|` inside the field.
pub fn write_fold_csv(report: &EvalReport, path: &Path) -> Result<(), TrainError> {
    let mut text = String::from("fold_id,test_years,ap,f1,baseline_ap,params,seconds\n");
    for f in &report.folds {
        let years: Vec<String> = f.test_years.iter().map(|y| y.to_string()).collect();
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            f.fold_id,
            years.join("|"),
            f.ap,
            f.f1,
            f.baseline_ap,
            f.params,
            f.seconds
        ));
    }
    std::fs::write(path, text).map_err(|source| TrainError::Io {
        action: "write",
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folds::{loyo_folds, Protocol};
    use crate::models::{EncoderFamily, Fusion, PeMode};
    use crate::synth::{generate_event, SynthConfig, SynthYearSpec};
    use crate::training::SelectionMetric;

    fn synth_cubes(seed: u64, years: &[i32], events_per_year: usize) -> Vec<FireEventCube> {
        // a dense ignition rate keeps positives in every yearly split, so
        // pooled AP is well defined on all folds
        let config = SynthConfig {
            seed,
            years: years.iter().map(|&y| SynthYearSpec::plain(y, 4.0)).collect(),
            events_per_year,
            height: 16,
            width: 16,
            max_days: 6,
            burn_days: 3,
            schema: SynthConfig::default_schema(),
        };
        let mut cubes = Vec::new();
        for year in &config.years {
            for event in 0..events_per_year {
                cubes.push(generate_event(&config, year, event));
            }
        }
        cubes
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            encoder_family: EncoderFamily::ResidualConv,
            encoder_widths: vec![2, 2, 4, 4],
            fusion: Fusion::None,
            t_window: 1,
            in_channels: 7,
            pe_mode: PeMode::RelativeWindow,
            attention_heads: 1,
            decoder_widths: vec![4, 2, 2],
            checkpoint_path: None,
        }
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            iterations: 2,
            batch_size: 2,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            loss: LossKind::Focal,
            selection_metric: SelectionMetric::Ap,
            seed: 3,
            eval_every: 2,
        }
    }

    #[test]
    fn standard_grid_has_forty_combinations() {
        let combos = GridSpec::standard().combinations();
        assert_eq!(combos.len(), 40);
        // every pair appears exactly once
        let unique: std::collections::BTreeSet<String> =
            combos.iter().map(|c| format!("{c:?}")).collect();
        assert_eq!(unique.len(), 40);
    }

    #[test]
    fn empty_grid_axis_is_rejected() {
        let cubes = synth_cubes(1, &[2018, 2019, 2020], 1);
        let plans = loyo_folds(&[2018, 2019, 2020]).unwrap();
        let grid = GridSpec { learning_rates: vec![], losses: vec![LossKind::Bce], pretraining: vec![false] };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            grid_search(&tiny_model(), &grid, &plans[0], &cubes, &quick_cfg(), dir.path(), 1),
            Err(TrainError::EmptyGrid("learning_rates"))
        ));
    }

    #[test]
    fn identical_grid_points_get_identical_metrics() {
        let cubes = synth_cubes(2, &[2018, 2019, 2020], 1);
        let plans = loyo_folds(&[2018, 2019, 2020]).unwrap();
        let grid = GridSpec {
            learning_rates: vec![1e-3, 1e-3],
            losses: vec![LossKind::Focal],
            pretraining: vec![false],
        };
        let dir = tempfile::tempdir().unwrap();
        let report =
            grid_search(&tiny_model(), &grid, &plans[0], &cubes, &quick_cfg(), dir.path(), 1)
                .unwrap();
        assert_eq!(report.entries.len(), 2);
        assert_eq!(report.completed, 2);
        assert_eq!(report.entries[0].best_val_ap, report.entries[1].best_val_ap);
        assert!(dir.path().join("grid.json").is_file());
    }

    #[test]
    fn failed_grid_runs_are_recorded_and_rank_last() {
        let cubes = synth_cubes(4, &[2018, 2019, 2020], 1);
        let plans = loyo_folds(&[2018, 2019, 2020]).unwrap();
        // pretraining without a named checkpoint cannot run
        let grid = GridSpec {
            learning_rates: vec![1e-3],
            losses: vec![LossKind::Focal],
            pretraining: vec![true, false],
        };
        let dir = tempfile::tempdir().unwrap();
        let report =
            grid_search(&tiny_model(), &grid, &plans[0], &cubes, &quick_cfg(), dir.path(), 1)
                .unwrap();
        assert_eq!(report.entries.len(), 2);
        assert_eq!(report.completed, 1);
        assert_eq!(report.failed, 1);
        assert!(report.entries[0].error.is_none());
        assert!(!report.entries[0].pretraining);
        assert!(report.entries[1].error.is_some());
        assert!(report.entries[1].pretraining);
    }

    #[test]
    fn three_year_benchmark_covers_all_six_folds() {
        let cubes = synth_cubes(6, &[2018, 2019, 2020], 2);
        let plans = loyo_folds(&[2018, 2019, 2020]).unwrap();
        assert_eq!(plans.len(), 6);
        let dir = tempfile::tempdir().unwrap();
        let report =
            run_benchmark(&tiny_model(), &plans, &cubes, &quick_cfg(), dir.path(), 1).unwrap();

        assert_eq!(report.folds.len(), 6);
        assert!(!report.single_fold);
        assert!(!report.partial);
        assert!(report.parameter_count > 0);

        // aggregates recompute exactly from the per-fold values
        let aps: Vec<f64> = report.folds.iter().map(|f| f.ap).collect();
        assert_eq!(report.mean_ap, mean(&aps));
        assert_eq!(report.std_ap, sample_std(&aps));

        // each year appears as a test year in exactly two folds
        for year in [2018, 2019, 2020] {
            let n = report.folds.iter().filter(|f| f.test_years == vec![year]).count();
            assert_eq!(n, 2, "year {year}");
            assert!(report.per_year.contains_key(&year));
        }

        let csv = std::fs::read_to_string(dir.path().join("folds.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "fold_id,test_years,ap,f1,baseline_ap,params,seconds");
        assert_eq!(lines[1].split(',').count(), 7);
        assert!(dir.path().join("report.json").is_file());
    }

    #[test]
    fn single_fold_reports_zero_std_and_a_flag() {
        let cubes = synth_cubes(7, &[2018, 2019, 2020], 1);
        let plans = loyo_folds(&[2018, 2019, 2020]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report =
            run_benchmark(&tiny_model(), &plans[..1], &cubes, &quick_cfg(), dir.path(), 1).unwrap();
        assert!(report.single_fold);
        assert_eq!(report.std_ap, 0.0);
        assert_eq!(report.mean_ap, report.folds[0].ap);
    }

    #[test]
    fn failed_folds_are_flagged_and_aggregation_continues() {
        let cubes = synth_cubes(8, &[2018, 2019, 2020], 1);
        let mut plans = loyo_folds(&[2018, 2019, 2020]).unwrap()[..1].to_vec();
        plans.push(FoldPlan {
            fold_id: 99,
            protocol: Protocol::Loyo,
            train_years: vec![2030],
            val_years: vec![2031],
            test_years: vec![2032],
            train_events: vec![],
            val_events: vec![],
            test_events: vec![],
        });
        let dir = tempfile::tempdir().unwrap();
        let report =
            run_benchmark(&tiny_model(), &plans, &cubes, &quick_cfg(), dir.path(), 1).unwrap();
        assert!(report.partial);
        assert_eq!(report.folds.len(), 1);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].fold_id, 99);

        // every fold failing is an error, not an empty report
        let dir2 = tempfile::tempdir().unwrap();
        assert!(matches!(
            run_benchmark(&tiny_model(), &plans[1..], &cubes, &quick_cfg(), dir2.path(), 1),
            Err(TrainError::AllFoldsFailed(1))
        ));
    }

    #[test]
    fn metric_json_is_byte_stable_across_reruns() {
        let cubes = synth_cubes(9, &[2018, 2019, 2020], 1);
        let plans = loyo_folds(&[2018, 2019, 2020]).unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_benchmark(&tiny_model(), &plans[..2], &cubes, &quick_cfg(), dir_a.path(), 1).unwrap();
        run_benchmark(&tiny_model(), &plans[..2], &cubes, &quick_cfg(), dir_b.path(), 1).unwrap();
        let a = std::fs::read(dir_a.path().join("metrics.json")).unwrap();
        let b = std::fs::read(dir_b.path().join("metrics.json")).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "metric JSON differs between identical benchmark runs");
    }

    #[test]
    fn worker_count_does_not_change_the_report() {
        let cubes = synth_cubes(9, &[2018, 2019, 2020], 1);
        let plans = loyo_folds(&[2018, 2019, 2020]).unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_benchmark(&tiny_model(), &plans[..3], &cubes, &quick_cfg(), dir_a.path(), 1).unwrap();
        run_benchmark(&tiny_model(), &plans[..3], &cubes, &quick_cfg(), dir_b.path(), 3).unwrap();
        let a = std::fs::read(dir_a.path().join("metrics.json")).unwrap();
        let b = std::fs::read(dir_b.path().join("metrics.json")).unwrap();
        assert_eq!(a, b, "metric JSON differs between serial and parallel runs");
    }

    #[test]
    fn parallel_grid_matches_the_serial_ranking() {
        let cubes = synth_cubes(5, &[2018, 2019, 2020], 1);
        let plans = loyo_folds(&[2018, 2019, 2020]).unwrap();
        let grid = GridSpec {
            learning_rates: vec![1e-2, 1e-3],
            losses: vec![LossKind::Bce, LossKind::Focal],
            pretraining: vec![false],
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let serial =
            grid_search(&tiny_model(), &grid, &plans[0], &cubes, &quick_cfg(), dir_a.path(), 1)
                .unwrap();
        let threaded =
            grid_search(&tiny_model(), &grid, &plans[0], &cubes, &quick_cfg(), dir_b.path(), 4)
                .unwrap();
        assert_eq!(serial.entries.len(), threaded.entries.len());
        for (a, b) in serial.entries.iter().zip(&threaded.entries) {
            assert_eq!(a.learning_rate, b.learning_rate);
            assert_eq!(a.loss, b.loss);
            assert_eq!(a.best_val_ap, b.best_val_ap);
            assert_eq!(a.best_val_f1, b.best_val_f1);
        }
    }
}
