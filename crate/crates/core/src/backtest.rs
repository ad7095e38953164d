//! Daily-recalibration backtesting.
//!
//! For each test day the forecaster receives an [`InformationSet`] that hides
//! the prices of that day and later. Completed days are appended to the
//! output file immediately, so an interrupted run keeps its progress and a
//! rerun with the same output path resumes after the last completed date.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use tracing::{debug, info};

use crate::data::{AccessLog, InformationSet, MarketDataset, TestPeriod};
use crate::forecast::{ForecastAppender, ForecastMatrix};
use crate::{EpfError, Result, HOURS};

/// A model that is refit every day and forecasts that day's 24 prices.
pub trait DailyForecaster: Sync {
    /// Carried from one day to the next in sequential runs (e.g. warm starts).
    /// Parallel runs start every day from `Default`.
    type State: Default + Send;

    fn forecast_day(&self, info: &InformationSet<'_>, state: &mut Self::State) -> Result<[f64; HOURS]>;
}

#[derive(Debug, Clone, Default)]
pub struct BacktestOptions {
    /// Worker threads across test days; 0 or 1 runs sequentially.
    pub jobs: usize,
    /// Forecast CSV, appended day by day and resumed if it exists.
    pub output: Option<PathBuf>,
    /// `date,seconds` log of per-day recalibration time.
    pub timing_log: Option<PathBuf>,
    /// Records every price read, for lookahead audits.
    pub audit: Option<Arc<AccessLog>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayTiming {
    pub date: NaiveDate,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BacktestOutput {
    pub forecasts: ForecastMatrix,
    /// Timings of the days computed in this run and any logged earlier.
    pub timings: Vec<DayTiming>,
}

impl BacktestOutput {
    pub fn mean_seconds(&self) -> Option<f64> {
        (!self.timings.is_empty())
            .then(|| self.timings.iter().map(|t| t.seconds).sum::<f64>() / self.timings.len() as f64)
    }
}

struct Sink {
    forecasts: Option<ForecastAppender>,
    timing: Option<(std::fs::File, PathBuf)>,
}

impl Sink {
    fn open(opts: &BacktestOptions) -> Result<Self> {
        let forecasts = opts.output.as_ref().map(ForecastAppender::open).transpose()?;
        let timing = match &opts.timing_log {
            Some(p) => {
                let fresh = fs::metadata(p).map(|m| m.len() == 0).unwrap_or(true);
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| EpfError::io(p, e))?;
                if fresh {
                    writeln!(f, "date,seconds").map_err(|e| EpfError::io(p, e))?;
                }
                Some((f, p.clone()))
            }
            None => None,
        };
        Ok(Self { forecasts, timing })
    }

    fn write(&mut self, date: NaiveDate, values: &[f64; HOURS], seconds: f64) -> Result<()> {
        if let Some(f) = self.forecasts.as_mut() {
            f.append(date, values)?;
        }
        if let Some((f, p)) = self.timing.as_mut() {
            writeln!(f, "{},{seconds:.6}", date.format("%Y-%m-%d")).map_err(|e| EpfError::io(&*p, e))?;
        }
        Ok(())
    }
}

/// Reads a `date,seconds` timing log.
pub fn read_timing_log(path: &Path) -> Result<Vec<DayTiming>> {
    let file = fs::File::open(path).map_err(|e| EpfError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EpfError::io(path, e))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parse_err = || EpfError::Parse {
            line: i + 1,
            message: format!("invalid timing row '{line}'"),
        };
        let (d, s) = line.split_once(',').ok_or_else(parse_err)?;
        out.push(DayTiming {
            date: NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").map_err(|_| parse_err())?,
            seconds: s.trim().parse().map_err(|_| parse_err())?,
        });
    }
    Ok(out)
}

fn completed_prefix(opts: &BacktestOptions, period: &TestPeriod) -> Result<ForecastMatrix> {
    let Some(path) = &opts.output else {
        return Ok(ForecastMatrix::empty());
    };
    if fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true) {
        return Ok(ForecastMatrix::empty());
    }
    let done = ForecastMatrix::read_csv(path)?;
    let expected: Vec<NaiveDate> = period.dates().take(done.n_days()).collect();
    if done.dates() != expected.as_slice() {
        return Err(EpfError::Config(format!(
            "existing forecast file {} is not a prefix of the test period starting {}",
            path.display(),
            period.start_date
        )));
    }
    Ok(done)
}

/// Runs `forecaster` over every day of `period`, refitting daily.
pub fn run_backtest<F: DailyForecaster>(
    forecaster: &F,
    dataset: &MarketDataset,
    period: &TestPeriod,
    opts: &BacktestOptions,
) -> Result<BacktestOutput> {
    let mut forecasts = completed_prefix(opts, period)?;
    let mut timings = match &opts.timing_log {
        Some(p) if p.exists() && !forecasts.is_empty() => read_timing_log(p)?,
        _ => Vec::new(),
    };
    let skip = forecasts.n_days();
    if skip > 0 {
        info!(skip, "resuming backtest after completed days");
    }
    let remaining: Vec<usize> = period.indices().skip(skip).collect();
    let mut sink = Sink::open(opts)?;
    let audit = opts.audit.as_deref();

    let run_day = |target: usize, state: &mut F::State| -> Result<(NaiveDate, [f64; HOURS], f64)> {
        let info = InformationSet::new(dataset, target)?.with_log(audit);
        let start = Instant::now();
        let values = forecaster.forecast_day(&info, state)?;
        let seconds = start.elapsed().as_secs_f64();
        debug!(date = %info.target_date(), seconds, "recalibrated");
        Ok((info.target_date(), values, seconds))
    };

    let mut record = |(date, values, seconds): (NaiveDate, [f64; HOURS], f64)| -> Result<()> {
        forecasts.push(date, &values)?;
        timings.push(DayTiming { date, seconds });
        sink.write(date, &values, seconds)
    };

    if opts.jobs <= 1 {
        let mut state = F::State::default();
        for target in remaining {
            record(run_day(target, &mut state)?)?;
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| EpfError::Config(format!("thread pool: {e}")))?;
        for chunk in remaining.chunks(opts.jobs * 2) {
            let results: Vec<_> = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|&t| run_day(t, &mut F::State::default()))
                    .collect()
            });
            for r in results {
                record(r?)?;
            }
        }
    }
    Ok(BacktestOutput { forecasts, timings })
}
