//! One function per subcommand. Each follows the same shape: load and
//! validate inputs (failures exit 1 before anything is written), create the
//! output directory and echo the resolved config, then run (failures exit 2
//! and flag that partial outputs may remain).

use std::fs;
use std::path::Path;

use serde::Serialize;

use firecast::analysis::{
    ap_vs_size, cross_year_run, dataset_diff, domain_report, embedding_export, growth_curves,
};
use firecast::data::{load_dataset, window_samples, FeatureSet, FireEventCube, NormStats};
use firecast::folds::{
    cross_year_protocol, loyo_folds, random_event_folds, wsts_plus_folds, EventRef, FoldPlan,
    Protocol, SampleRef,
};
use firecast::models::{load_checkpoint, ModelConfig};
use firecast::synth::SynthConfig;
use firecast::training::{grid_search, run_benchmark, run_fold, EventScore, TrainConfig};

use crate::config::{
    from_value_named, load_config, read_json_value, write_resolved, AnalyzeSpec, CrossYearSpec,
    DiffSpec, EmbedSpec, ExperimentSpec, FoldsSpec, GridSearchSpec,
};
use crate::CliError;

fn ensure_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::runtime(format!("failed to create {}: {e}", out.display())))
}

fn write_json_under<T: Serialize>(out: &Path, path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| {
        CliError::runtime_under(out, format!("failed to write {}: {e}", path.display()))
    })
}

fn load_dataset_checked(data: &Path) -> Result<Vec<FireEventCube>, CliError> {
    if !data.exists() {
        return Err(CliError::Validation(format!("--data: {} does not exist", data.display())));
    }
    let cubes = load_dataset(data).map_err(|e| CliError::Validation(format!("--data: {e}")))?;
    if cubes.is_empty() {
        return Err(CliError::Validation(format!(
            "--data: {} contains no events",
            data.display()
        )));
    }
    Ok(cubes)
}

/// Reads one fold plan file, or every `fold_*.json` in a directory, sorted
/// by fold id.
fn read_plans(plan: &Path) -> Result<Vec<FoldPlan>, CliError> {
    if !plan.exists() {
        return Err(CliError::Validation(format!("--plan: {} does not exist", plan.display())));
    }
    let mut paths = Vec::new();
    if plan.is_dir() {
        let entries = fs::read_dir(plan)
            .map_err(|e| CliError::Validation(format!("--plan: cannot read {}: {e}", plan.display())))?;
        for entry in entries {
            let path = entry
                .map_err(|e| CliError::Validation(format!("--plan: cannot read {}: {e}", plan.display())))?
                .path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("fold_") && name.ends_with(".json") {
                paths.push(path);
            }
        }
        if paths.is_empty() {
            return Err(CliError::Validation(format!(
                "--plan: no fold_*.json files in {}",
                plan.display()
            )));
        }
    } else {
        paths.push(plan.to_path_buf());
    }
    let mut plans = Vec::with_capacity(paths.len());
    for path in &paths {
        let value = read_json_value(path, "--plan")?;
        plans.push(from_value_named::<FoldPlan>(value, path)?);
    }
    plans.sort_by_key(|p| p.fold_id);
    Ok(plans)
}

fn write_plans(out: &Path, plans: &[FoldPlan]) -> Result<(), CliError> {
    for plan in plans {
        let path = out.join(format!("fold_{:02}.json", plan.fold_id));
        write_json_under(out, &path, plan)?;
    }
    Ok(())
}

pub fn synth(
    seed: Option<u64>,
    config: &Path,
    out: &Path,
    quiet: bool,
) -> Result<(), CliError> {
    let mut cfg: SynthConfig = load_config(config, "synth")?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    ensure_out(out)?;
    write_resolved(out, "synth", &cfg)?;
    firecast::synth::generate(&cfg, out)
        .map_err(|e| CliError::runtime_under(out, e.to_string()))?;
    if !quiet {
        let events: usize = cfg.years.len() * cfg.events_per_year;
        println!("wrote {} synthetic events over {} years to {}", events, cfg.years.len(), out.display());
    }
    Ok(())
}

fn parse_protocol(name: &str) -> Result<Protocol, CliError> {
    match name {
        "loyo" => Ok(Protocol::Loyo),
        "wsts_plus" => Ok(Protocol::WstsPlus),
        "random_event" => Ok(Protocol::RandomEvent),
        "cross_year" => Ok(Protocol::CrossYear),
        other => Err(CliError::Validation(format!(
            "--protocol: unknown protocol `{other}`, expected loyo, wsts_plus, random_event, or cross_year"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn folds(
    seed: Option<u64>,
    config: Option<&Path>,
    protocol: Option<&str>,
    years: &[i32],
    k: Option<usize>,
    data: Option<&Path>,
    out: &Path,
    quiet: bool,
) -> Result<(), CliError> {
    let mut spec: FoldsSpec = match config {
        Some(path) => load_config(path, "folds")?,
        None => {
            let name = protocol.ok_or_else(|| {
                CliError::Validation("--protocol: required when no --config is given".into())
            })?;
            FoldsSpec { protocol: parse_protocol(name)?, years: Vec::new(), k: None, seed: 0 }
        }
    };
    if let Some(name) = protocol {
        spec.protocol = parse_protocol(name)?;
    }
    if !years.is_empty() {
        spec.years = years.to_vec();
    }
    if k.is_some() {
        spec.k = k;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }

    let plans = match spec.protocol {
        Protocol::Loyo => loyo_folds(&spec.years),
        Protocol::WstsPlus => wsts_plus_folds(&spec.years),
        Protocol::RandomEvent => {
            let data = data.ok_or_else(|| {
                CliError::Validation("--data: required for the random_event protocol".into())
            })?;
            let cubes = load_dataset_checked(data)?;
            let events: Vec<EventRef> = cubes.iter().map(EventRef::from).collect();
            let k = spec.k.ok_or_else(|| {
                CliError::Validation("--k: required for the random_event protocol".into())
            })?;
            random_event_folds(&events, k, spec.seed)
        }
        Protocol::CrossYear => {
            return Err(CliError::Validation(
                "protocol: cross_year splits are sample-level and produced by the crossyear command"
                    .into(),
            ))
        }
    }
    .map_err(|e| CliError::Validation(e.to_string()))?;

    ensure_out(out)?;
    write_resolved(out, "folds", &spec)?;
    write_plans(out, &plans)?;
    if !quiet {
        println!("wrote {} fold plans to {}", plans.len(), out.display());
    }
    Ok(())
}

pub fn train(
    seed: Option<u64>,
    config: &Path,
    data: &Path,
    plan: &Path,
    out: &Path,
    quiet: bool,
) -> Result<(), CliError> {
    let mut spec: ExperimentSpec = load_config(config, "train")?;
    if let Some(s) = seed {
        spec.train.seed = s;
    }
    spec.validate()?;
    let cubes = load_dataset_checked(data)?;
    let plans = read_plans(plan)?;
    if plans.len() != 1 {
        return Err(CliError::Validation(format!(
            "--plan: train expects exactly one fold plan, got {}",
            plans.len()
        )));
    }
    ensure_out(out)?;
    write_resolved(out, "train", &spec)?;
    let result = run_fold(&spec.model, &plans[0], &cubes, &spec.train, out)
        .map_err(|e| CliError::runtime_under(out, e.to_string()))?;
    write_json_under(out, &out.join("result.json"), &result)?;
    if !quiet {
        println!(
            "fold {}: test AP {:.4} (baseline {:.4}), max-F1 {:.4}",
            result.fold_id, result.ap, result.baseline_ap, result.f1
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn gridsearch(
    seed: Option<u64>,
    config: &Path,
    data: &Path,
    plan: &Path,
    out: &Path,
    parallel: usize,
    quiet: bool,
) -> Result<(), CliError> {
    let mut spec: GridSearchSpec = load_config(config, "gridsearch")?;
    if let Some(s) = seed {
        spec.train.seed = s;
    }
    spec.validate()?;
    let cubes = load_dataset_checked(data)?;
    let plans = read_plans(plan)?;
    if plans.len() != 1 {
        return Err(CliError::Validation(format!(
            "--plan: gridsearch expects exactly one fold plan, got {}",
            plans.len()
        )));
    }
    ensure_out(out)?;
    write_resolved(out, "gridsearch", &spec)?;
    let report = grid_search(&spec.model, &spec.grid, &plans[0], &cubes, &spec.train, out, parallel)
        .map_err(|e| CliError::runtime_under(out, e.to_string()))?;
    if !quiet {
        match report.entries.first().and_then(|e| e.best_val_ap.map(|ap| (e, ap))) {
            Some((best, ap)) => println!(
                "{} runs ({} failed); best: lr {:e}, {:?} loss, pretraining {} (val AP {ap:.4})",
                report.entries.len(),
                report.failed,
                best.learning_rate,
                best.loss,
                best.pretraining
            ),
            None => println!("{} runs, none completed", report.entries.len()),
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn benchmark(
    seed: Option<u64>,
    model: Option<&Path>,
    config: Option<&Path>,
    data: &Path,
    plan: &Path,
    out: &Path,
    parallel: usize,
    quiet: bool,
) -> Result<(), CliError> {
    let mut spec = match (model, config) {
        (Some(_), Some(_)) => {
            return Err(CliError::Validation(
                "--model: give either --model or --config, not both".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Validation(
                "--config: one of --config or --model is required".into(),
            ))
        }
        (Some(path), None) => {
            let value = read_json_value(path, "--model")?;
            let model: ModelConfig = from_value_named(value, path)?;
            ExperimentSpec { model, train: TrainConfig::default() }
        }
        (None, Some(path)) => load_config::<ExperimentSpec>(path, "benchmark")?,
    };
    if let Some(s) = seed {
        spec.train.seed = s;
    }
    spec.validate()?;
    let cubes = load_dataset_checked(data)?;
    let plans = read_plans(plan)?;
    ensure_out(out)?;
    write_resolved(out, "benchmark", &spec)?;
    let report = run_benchmark(&spec.model, &plans, &cubes, &spec.train, out, parallel)
        .map_err(|e| CliError::runtime_under(out, e.to_string()))?;
    if !quiet {
        println!(
            "mean test AP {:.4} (+/- {:.4}) over {} of {} folds; baseline {:.4}",
            report.mean_ap,
            report.std_ap,
            report.folds.len(),
            plans.len(),
            report.baseline_mean_ap
        );
    }
    Ok(())
}

pub fn crossyear(
    seed: Option<u64>,
    config: &Path,
    data: &Path,
    out: &Path,
    parallel: usize,
    quiet: bool,
) -> Result<(), CliError> {
    let mut spec: CrossYearSpec = load_config(config, "crossyear")?;
    if let Some(s) = seed {
        spec.train.seed = s;
    }
    spec.validate()?;
    let cubes = load_dataset_checked(data)?;

    let mut refs = Vec::new();
    for cube in &cubes {
        let features = FeatureSet::all(&cube.channel_schema);
        let samples = window_samples(cube, spec.model.t_window, &features)
            .map_err(|e| CliError::Validation(format!("--data: {e}")))?;
        refs.extend(samples.iter().map(|s| SampleRef {
            year: s.year,
            event_id: s.event_id.clone(),
            target_date: s.target_date,
        }));
    }
    let plan = cross_year_protocol(&refs, spec.val_quota, spec.train_cap, spec.protocol_seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    ensure_out(out)?;
    write_resolved(out, "crossyear", &spec)?;
    write_json_under(out, &out.join("plan.json"), &plan)?;
    let matrix = cross_year_run(&spec.model, &plan, &cubes, &spec.train, out, parallel)
        .map_err(|e| CliError::runtime_under(out, e.to_string()))?;
    if !quiet {
        println!(
            "{}x{} transfer matrix: diagonal mean AP {:.4}, off-diagonal {:.4}, {} failures",
            matrix.years.len(),
            matrix.years.len(),
            matrix.diagonal_mean(),
            matrix.off_diagonal_mean(),
            matrix.failures.len()
        );
    }
    Ok(())
}

/// Pulls per-event test scores out of a benchmark `report.json` or
/// `metrics.json` without a typed parse, because an AP over zero positives
/// serializes as null.
fn event_scores_from_report(path: &Path) -> Result<Vec<EventScore>, CliError> {
    let bad = |detail: &str| {
        CliError::Validation(format!("--report: {} {detail}", path.display()))
    };
    let value = read_json_value(path, "--report")?;
    let folds = value
        .get("folds")
        .and_then(|v| v.as_array())
        .ok_or_else(|| bad("has no `folds` array; expected a benchmark report"))?;
    let mut scores = Vec::new();
    for fold in folds {
        let events = fold
            .get("per_event")
            .and_then(|v| v.as_array())
            .ok_or_else(|| bad("has a fold without a `per_event` array"))?;
        for event in events {
            let field = |key: &str| {
                event.get(key).ok_or_else(|| bad(&format!("has an event without `{key}`")))
            };
            scores.push(EventScore {
                event_id: field("event_id")?
                    .as_str()
                    .ok_or_else(|| bad("has a non-string `event_id`"))?
                    .to_string(),
                year: field("year")?.as_i64().ok_or_else(|| bad("has a non-integer `year`"))?
                    as i32,
                ap: field("ap")?.as_f64().unwrap_or(f64::NAN),
                fire_size: field("fire_size")?
                    .as_u64()
                    .ok_or_else(|| bad("has a non-integer `fire_size`"))?,
            });
        }
    }
    Ok(scores)
}

#[allow(clippy::too_many_arguments)]
pub fn analyze(
    seed: Option<u64>,
    config: Option<&Path>,
    data: &Path,
    report: Option<&Path>,
    out: &Path,
    quiet: bool,
) -> Result<(), CliError> {
    let mut spec: AnalyzeSpec = match config {
        Some(path) => load_config(path, "analyze")?,
        None => AnalyzeSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let cubes = load_dataset_checked(data)?;
    let scores = match report {
        Some(path) if !path.exists() => {
            return Err(CliError::Validation(format!(
                "--report: {} does not exist",
                path.display()
            )))
        }
        Some(path) => Some(event_scores_from_report(path)?),
        None => None,
    };

    ensure_out(out)?;
    write_resolved(out, "analyze", &spec)?;
    let domain = domain_report(&cubes, spec.seed)
        .map_err(|e| CliError::runtime_under(out, e.to_string()))?;
    write_json_under(out, &out.join("domain.json"), &domain)?;
    let growth = growth_curves(&cubes, spec.growth_horizon)
        .map_err(|e| CliError::runtime_under(out, e.to_string()))?;
    write_json_under(out, &out.join("growth.json"), &growth)?;
    let mut wrote = vec!["domain.json", "growth.json"];
    if let Some(scores) = scores {
        let size = ap_vs_size(&scores).map_err(|e| CliError::runtime_under(out, e.to_string()))?;
        write_json_under(out, &out.join("size.json"), &size)?;
        wrote.push("size.json");
    }
    if !quiet {
        println!("wrote {} to {}", wrote.join(", "), out.display());
    }
    Ok(())
}

pub fn diff(a: &Path, b: &Path, out: &Path, quiet: bool) -> Result<(), CliError> {
    if !a.exists() {
        return Err(CliError::Validation(format!("--a: {} does not exist", a.display())));
    }
    if !b.exists() {
        return Err(CliError::Validation(format!("--b: {} does not exist", b.display())));
    }
    ensure_out(out)?;
    let spec = DiffSpec { a: a.display().to_string(), b: b.display().to_string() };
    write_resolved(out, "diff", &spec)?;
    let report =
        dataset_diff(a, b).map_err(|e| CliError::runtime_under(out, e.to_string()))?;
    write_json_under(out, &out.join("diff.json"), &report)?;
    if !quiet {
        println!(
            "compared {} events; max relative band difference {:.6}",
            report.events_compared, report.max_rel_diff
        );
    }
    Ok(())
}

pub fn export_embeddings(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    quiet: bool,
) -> Result<(), CliError> {
    if !checkpoint.exists() {
        return Err(CliError::Validation(format!(
            "--checkpoint: {} does not exist",
            checkpoint.display()
        )));
    }
    let cubes = load_dataset_checked(data)?;
    ensure_out(out)?;
    let spec = EmbedSpec {
        checkpoint: checkpoint.display().to_string(),
        data: data.display().to_string(),
    };
    write_resolved(out, "export-embeddings", &spec)?;
    let model =
        load_checkpoint(checkpoint).map_err(|e| CliError::runtime_under(out, e.to_string()))?;

    let mut samples = Vec::new();
    for cube in &cubes {
        let features = FeatureSet::all(&cube.channel_schema);
        let cube_samples = window_samples(cube, model.config.t_window, &features)
            .map_err(|e| CliError::runtime_under(out, e.to_string()))?;
        samples.extend(cube_samples);
    }
    if samples.is_empty() {
        return Err(CliError::runtime_under(
            out,
            format!("no samples at window length {} in the dataset", model.config.t_window),
        ));
    }
    // Statistics come from the exported dataset itself; embeddings are for
    // relative structure, not cross-dataset comparison.
    let stats = NormStats::fit(&samples, &cubes[0].channel_schema);
    firecast::data::normalize(&mut samples, &stats);
    let path = out.join("embeddings.csv");
    let rows = embedding_export(&model, &samples, &path)
        .map_err(|e| CliError::runtime_under(out, e.to_string()))?;
    if !quiet {
        println!("wrote {} embeddings to {}", rows, path.display());
    }
    Ok(())
}
