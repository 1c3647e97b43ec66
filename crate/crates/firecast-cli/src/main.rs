//! Command-line driver for the fire spread toolkit.
//!
//! Experiment definitions live in JSON config documents; flags only select
//! files, output directories, seeds, and worker counts. Every command writes
//! a `resolved_config.json` beside its outputs that can be fed back through
//! `--config` to repeat the run exactly.
//!
//! Exit codes: 0 on success, 1 when inputs fail validation (the message
//! names the offending field or flag), 2 when a run fails after outputs
//! started to appear.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// What went wrong, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad inputs, rejected before anything was written. Exit 1.
    Validation(String),
    /// A failure mid-run; outputs under `partial` may be incomplete. Exit 2.
    Runtime { message: String, partial: Option<PathBuf> },
}

impl CliError {
    fn runtime(message: String) -> Self {
        CliError::Runtime { message, partial: None }
    }

    fn runtime_under(out: &Path, message: String) -> Self {
        CliError::Runtime { message, partial: Some(out.to_path_buf()) }
    }
}

#[derive(Parser)]
#[command(
    name = "firecast",
    version = config::version_string(),
    about = "Train and evaluate next-day fire spread models"
)]
struct Cli {
    /// Override the seed recorded in the config document.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress informational output; errors still go to stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fire dataset from a config document.
    Synth {
        /// Generator settings (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand an evaluation protocol into fold plan files.
    Folds {
        /// Fold settings (JSON); flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Protocol name: loyo, wsts_plus, or random_event.
        #[arg(long)]
        protocol: Option<String>,
        /// Years covered by the dataset, comma separated.
        #[arg(long, value_delimiter = ',')]
        years: Vec<i32>,
        /// Fold count for the random_event protocol.
        #[arg(long)]
        k: Option<usize>,
        /// Dataset root; required by the random_event protocol.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory for the fold_NN.json plan files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on one fold plan and score its test split.
    Train {
        /// Model and training settings (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Dataset root.
        #[arg(long)]
        data: PathBuf,
        /// A single fold plan file.
        #[arg(long)]
        plan: PathBuf,
        /// Run directory for checkpoints and results.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep hyperparameter combinations on one fold plan.
    Gridsearch {
        /// Model, training, and grid settings (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Dataset root.
        #[arg(long)]
        data: PathBuf,
        /// A single fold plan file.
        #[arg(long)]
        plan: PathBuf,
        /// Run directory for per-combination runs and grid.json.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Train and evaluate over a set of fold plans.
    Benchmark {
        /// Bare model settings (JSON); training settings take defaults.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Model and training settings (JSON); alternative to --model.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root.
        #[arg(long)]
        data: PathBuf,
        /// A fold plan file, or a directory of fold_*.json plans.
        #[arg(long)]
        plan: PathBuf,
        /// Run directory for per-fold runs, report.json, and metrics.json.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Train one model per year and score every year on every other.
    Crossyear {
        /// Model, training, and split-size settings (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Dataset root.
        #[arg(long)]
        data: PathBuf,
        /// Run directory for per-year runs, plan.json, and matrix.json.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Summarize per-year distributions and fire growth in a dataset.
    Analyze {
        /// Analysis settings (JSON); optional, defaults apply.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root.
        #[arg(long)]
        data: PathBuf,
        /// A benchmark report.json; adds a score-versus-size breakdown.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for domain.json, growth.json, and size.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two dataset roots band by band.
    Diff {
        /// First dataset root.
        #[arg(long)]
        a: PathBuf,
        /// Second dataset root.
        #[arg(long)]
        b: PathBuf,
        /// Directory for diff.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-sample encoder embeddings to CSV.
    ExportEmbeddings {
        /// Model checkpoint to embed with.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root.
        #[arg(long)]
        data: PathBuf,
        /// Directory for embeddings.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    let quiet = cli.quiet;
    match cli.command {
        Command::Synth { config, out } => commands::synth(seed, &config, &out, quiet),
        Command::Folds { config, protocol, years, k, data, out } => commands::folds(
            seed,
            config.as_deref(),
            protocol.as_deref(),
            &years,
            k,
            data.as_deref(),
            &out,
            quiet,
        ),
        Command::Train { config, data, plan, out } => {
            commands::train(seed, &config, &data, &plan, &out, quiet)
        }
        Command::Gridsearch { config, data, plan, out, parallel } => {
            commands::gridsearch(seed, &config, &data, &plan, &out, parallel, quiet)
        }
        Command::Benchmark { model, config, data, plan, out, parallel } => commands::benchmark(
            seed,
            model.as_deref(),
            config.as_deref(),
            &data,
            &plan,
            &out,
            parallel,
            quiet,
        ),
        Command::Crossyear { config, data, out, parallel } => {
            commands::crossyear(seed, &config, &data, &out, parallel, quiet)
        }
        Command::Analyze { config, data, report, out } => {
            commands::analyze(seed, config.as_deref(), &data, report.as_deref(), &out, quiet)
        }
        Command::Diff { a, b, out } => commands::diff(&a, &b, &out, quiet),
        Command::ExportEmbeddings { checkpoint, data, out } => {
            commands::export_embeddings(&checkpoint, &data, &out, quiet)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes; everything else is a
            // usage error and exits like any other validation failure.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let default_level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level))
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime { message, partial }) => {
            eprintln!("error: {message}");
            if let Some(dir) = partial {
                eprintln!("note: partial outputs may remain under {}", dir.display());
            }
            ExitCode::from(2)
        }
    }
}
