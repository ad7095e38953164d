//! Arithmetic-mean ensembles: LEAR over several calibration windows and DNNs
//! from independent hyperparameter searches.

use std::path::PathBuf;

use ndarray::Array2;
use rayon::prelude::*;
use tracing::info;

use crate::backtest::{BacktestOptions, BacktestOutput};
use crate::data::{MarketDataset, TestPeriod};
use crate::dnn::{self, DnnConfig};
use crate::forecast::ForecastMatrix;
use crate::lear::{self, LearConfig};
use crate::metrics::mae;
use crate::{EpfError, Result};

/// Calibration windows of the LEAR ensemble: 8 and 12 weeks, 3 and 4 years.
pub const LEAR_WINDOWS: [usize; 4] = [56, 84, 1092, 1456];

/// Elementwise mean of forecasts that share dates.
///
/// Each cell sums its member values in sorted order, so the result is
/// bit-identical under any ordering of the members.
pub fn combine_mean(forecasts: &[&ForecastMatrix]) -> Result<ForecastMatrix> {
    let first = forecasts
        .first()
        .ok_or_else(|| EpfError::Combine("nothing to combine".into()))?;
    for (i, f) in forecasts.iter().enumerate() {
        if f.dates() != first.dates() {
            return Err(EpfError::Combine(format!("member {i} covers different dates than member 0")));
        }
    }
    let k = forecasts.len() as f64;
    let mut cell = Vec::with_capacity(forecasts.len());
    let mean = Array2::from_shape_fn(first.values().dim(), |ix| {
        cell.clear();
        cell.extend(forecasts.iter().map(|f| f.values()[ix]));
        cell.sort_by(f64::total_cmp);
        cell.iter().sum::<f64>() / k
    });
    ForecastMatrix::new(first.dates().to_vec(), mean)
}

/// What the members of an ensemble are.
#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleSpec {
    /// One LEAR per calibration window, sharing `base` otherwise.
    LearWindows { windows: Vec<usize>, base: LearConfig },
    /// One DNN per best configuration (each from its own study).
    DnnRuns(Vec<DnnConfig>),
}

impl EnsembleSpec {
    pub fn lear_default() -> Self {
        EnsembleSpec::LearWindows {
            windows: LEAR_WINDOWS.to_vec(),
            base: LearConfig::new(LEAR_WINDOWS[0]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EnsembleSpec::LearWindows { windows, .. } => windows.len(),
            EnsembleSpec::DnnRuns(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Forecast file of member `i`, e.g. `NP_lear_84.csv` or `NP_dnn_2.csv`.
    pub fn member_file(&self, market_id: &str, i: usize) -> PathBuf {
        match self {
            EnsembleSpec::LearWindows { windows, .. } => lear::forecast_file_name(market_id, windows[i]),
            EnsembleSpec::DnnRuns(_) => dnn::forecast_file_name(market_id, i + 1),
        }
    }

    pub fn ensemble_file(&self, market_id: &str) -> PathBuf {
        let kind = match self {
            EnsembleSpec::LearWindows { .. } => "lear",
            EnsembleSpec::DnnRuns(_) => "dnn",
        };
        PathBuf::from(format!("{market_id}_{kind}_ensemble.csv"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct EnsembleOptions {
    /// Where member and ensemble CSVs go; members resume from their files.
    pub output_dir: Option<PathBuf>,
    /// Run members concurrently.
    pub parallel_members: bool,
    /// Day-level parallelism inside each member backtest.
    pub jobs: usize,
    /// Also write `<member>.timing.csv` next to each member file.
    pub timing_logs: bool,
}

#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    pub ensemble: ForecastMatrix,
    /// Member name (file stem) and its backtest.
    pub members: Vec<(String, BacktestOutput)>,
}

impl EnsembleOutput {
    pub fn member_forecasts(&self) -> Vec<&ForecastMatrix> {
        self.members.iter().map(|(_, m)| &m.forecasts).collect()
    }
}

/// Backtests every member over `period` and averages them.
pub fn run_ensemble(
    dataset: &MarketDataset,
    period: &TestPeriod,
    spec: &EnsembleSpec,
    opts: &EnsembleOptions,
) -> Result<EnsembleOutput> {
    if spec.is_empty() {
        return Err(EpfError::Combine("ensemble needs at least one member".into()));
    }
    let market = dataset.market_id();
    let member_opts = |i: usize| BacktestOptions {
        jobs: opts.jobs,
        output: opts.output_dir.as_ref().map(|d| d.join(spec.member_file(market, i))),
        timing_log: opts
            .output_dir
            .as_ref()
            .filter(|_| opts.timing_logs)
            .map(|d| d.join(spec.member_file(market, i).with_extension("timing.csv"))),
        ..Default::default()
    };
    let run_member = |i: usize| -> Result<(String, BacktestOutput)> {
        let name = spec.member_file(market, i).with_extension("").to_string_lossy().into_owned();
        info!(member = %name, "running ensemble member");
        let out = match spec {
            EnsembleSpec::LearWindows { windows, base } => {
                let config = LearConfig {
                    window_days: windows[i],
                    ..base.clone()
                };
                lear::backtest_lear(dataset, period, &config, &member_opts(i))?
            }
            EnsembleSpec::DnnRuns(configs) => dnn::backtest_dnn(dataset, period, &configs[i], &member_opts(i))?,
        };
        Ok((name, out))
    };
    let members: Vec<(String, BacktestOutput)> = if opts.parallel_members {
        (0..spec.len()).into_par_iter().map(run_member).collect::<Result<_>>()?
    } else {
        (0..spec.len()).map(run_member).collect::<Result<_>>()?
    };
    let refs: Vec<&ForecastMatrix> = members.iter().map(|(_, m)| &m.forecasts).collect();
    let ensemble = combine_mean(&refs)?;
    if let Some(dir) = &opts.output_dir {
        ensemble.write_csv(dir.join(spec.ensemble_file(market)))?;
    }
    Ok(EnsembleOutput { ensemble, members })
}

/// LEAR ensemble over `windows` (normally [`LEAR_WINDOWS`]).
pub fn run_lear_ensemble(
    dataset: &MarketDataset,
    period: &TestPeriod,
    windows: &[usize],
    base: &LearConfig,
    opts: &EnsembleOptions,
) -> Result<EnsembleOutput> {
    let spec = EnsembleSpec::LearWindows {
        windows: windows.to_vec(),
        base: base.clone(),
    };
    run_ensemble(dataset, period, &spec, opts)
}

/// DNN ensemble, one member per best configuration.
pub fn run_dnn_ensemble(
    dataset: &MarketDataset,
    period: &TestPeriod,
    configs: &[DnnConfig],
    opts: &EnsembleOptions,
) -> Result<EnsembleOutput> {
    run_ensemble(dataset, period, &EnsembleSpec::DnnRuns(configs.to_vec()), opts)
}

/// Checks that the ensemble MAE does not exceed the mean member MAE, which
/// holds for any mean combination by the triangle inequality.
/// Returns `(ensemble MAE, mean member MAE)`.
pub fn check_convexity(actuals: &ForecastMatrix, ensemble: &ForecastMatrix, members: &[&ForecastMatrix]) -> Result<(f64, f64)> {
    let act = actuals.select(ensemble.dates())?;
    let e = mae(act.values(), ensemble.values())?;
    let mut sum = 0.0;
    for m in members {
        sum += mae(act.values(), m.values())?;
    }
    let mean = sum / members.len().max(1) as f64;
    if e > mean * (1.0 + 1e-12) + 1e-12 {
        return Err(EpfError::Combine(format!(
            "ensemble MAE {e} exceeds the mean member MAE {mean}"
        )));
    }
    Ok((e, mean))
}
