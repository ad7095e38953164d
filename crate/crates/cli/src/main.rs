//! `epf`: batch front end for backtests, hyperparameter studies, evaluation
//! and significance tests.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric or convergence error.

mod commands;
mod config;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use epf::metrics::NaiveKind;
use epf::stattests::{Norm, TestKind};
use epf::EpfError;
use tracing_subscriber::EnvFilter;

use config::RawConfig;

#[derive(Parser, Debug)]
#[command(name = "epf", version, about = "Day-ahead electricity price forecasting benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Download benchmark datasets into the cache.
    Fetch {
        /// Market ids (NP, PJM, BE, FR, DE).
        #[arg(required = true)]
        markets: Vec<String>,
        #[arg(long, alias = "cache_dir")]
        cache_dir: Option<PathBuf>,
        /// Alternative dataset manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Daily-recalibrated backtest over the test period.
    Backtest(ExperimentArgs),
    /// Hyperparameter and feature search for the DNN, one study per seed.
    Hyperopt(ExperimentArgs),
    /// Accuracy metrics of forecast files.
    Evaluate {
        /// Dataset CSV or a forecast-format CSV of realised prices.
        #[arg(long)]
        actuals: PathBuf,
        #[arg(required = true)]
        forecasts: Vec<PathBuf>,
        #[arg(long, default_value = "lag7")]
        naive: NaiveKind,
        /// Metric report (`model,metric,value`).
        #[arg(long, short, default_value = "metrics.csv")]
        output: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Pairwise DM or GW tests rendered as a chessboard.
    Test {
        #[arg(long)]
        actuals: PathBuf,
        #[arg(required = true)]
        forecasts: Vec<PathBuf>,
        /// `dm`, `gw` or `gw:<q>`.
        #[arg(long = "test", default_value = "dm")]
        kind: TestKind,
        /// Loss norm, 1 or 2.
        #[arg(long, default_value_t = 1)]
        norm: u32,
        /// SVG path; the p-values go to a CSV with the same stem.
        #[arg(long, short, default_value = "pvalues.svg")]
        output: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
    /// Summary table of every forecast in a run directory.
    Report { run_dir: PathBuf },
}

/// A config file plus one flag per config key.
#[derive(Args, Debug)]
struct ExperimentArgs {
    /// `key = value` experiment file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Worker threads across test days, ensemble members and studies.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    market: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    /// lear, dnn, lear_ensemble, dnn_ensemble or naive.
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated calibration windows in days.
    #[arg(long)]
    windows: Option<String>,
    #[arg(long, alias = "allow_any_window", num_args = 0..=1, default_missing_value = "true")]
    allow_any_window: Option<String>,
    #[arg(long, alias = "test_start")]
    test_start: Option<String>,
    #[arg(long, alias = "test_end")]
    test_end: Option<String>,
    /// Comma-separated seeds; one DNN member or study per seed.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, alias = "hyperopt_budget")]
    hyperopt_budget: Option<String>,
    #[arg(long, alias = "hyperopt_startup")]
    hyperopt_startup: Option<String>,
    /// `auto` or comma-separated hyperparameter JSON files.
    #[arg(long)]
    hyperparams: Option<String>,
    /// Run directory.
    #[arg(long, short)]
    output: Option<String>,
    #[arg(long)]
    naive: Option<String>,
    #[arg(long, alias = "max_epochs")]
    max_epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long, alias = "batch_size")]
    batch_size: Option<String>,
    #[arg(long, alias = "total_weeks")]
    total_weeks: Option<String>,
    #[arg(long, alias = "validation_weeks")]
    validation_weeks: Option<String>,
    #[arg(long, alias = "split_mode")]
    split_mode: Option<String>,
    #[arg(long, alias = "cache_dir")]
    cache_dir: Option<String>,
}

impl ExperimentArgs {
    fn raw_config(&self) -> epf::Result<RawConfig> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        let flags = [
            ("market", &self.market),
            ("dataset", &self.dataset),
            ("model", &self.model),
            ("windows", &self.windows),
            ("allow_any_window", &self.allow_any_window),
            ("test_start", &self.test_start),
            ("test_end", &self.test_end),
            ("seeds", &self.seeds),
            ("hyperopt_budget", &self.hyperopt_budget),
            ("hyperopt_startup", &self.hyperopt_startup),
            ("hyperparams", &self.hyperparams),
            ("output", &self.output),
            ("naive", &self.naive),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("batch_size", &self.batch_size),
            ("total_weeks", &self.total_weeks),
            ("validation_weeks", &self.validation_weeks),
            ("split_mode", &self.split_mode),
            ("cache_dir", &self.cache_dir),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                raw.set(key, v.clone())?;
            }
        }
        Ok(raw)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<EpfError>()) {
        Some(EpfError::Config(_)) => 1,
        Some(e) if e.is_numeric_error() => 3,
        _ => 2,
    }
}

fn set_jobs(jobs: usize) {
    let threads = jobs.max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        tracing::debug!("thread pool already initialised: {e}");
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fetch {
            markets,
            cache_dir,
            manifest,
        } => commands::fetch(&markets, cache_dir.as_deref(), manifest.as_deref()),
        Command::Backtest(args) => {
            set_jobs(args.jobs);
            commands::backtest(args.raw_config()?, args.jobs)
        }
        Command::Hyperopt(args) => {
            set_jobs(args.jobs);
            commands::hyperopt(args.raw_config()?)
        }
        Command::Evaluate {
            actuals,
            forecasts,
            naive,
            output,
            json,
        } => commands::evaluate(&actuals, &forecasts, naive, &output, json.as_deref()),
        Command::Test {
            actuals,
            forecasts,
            kind,
            norm,
            output,
            title,
        } => commands::test(&actuals, &forecasts, kind, Norm::from_p(norm)?, &output, title.as_deref()),
        Command::Report { run_dir } => commands::report(&run_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn,epf=info")))
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
