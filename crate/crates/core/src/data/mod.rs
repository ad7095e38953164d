//! Market datasets, calendar handling, test splits and calibration windows.
//!
//! A [`MarketDataset`] is a daily panel: every calendar day carries 24 hourly
//! day-ahead prices and two exogenous day-ahead forecast series. Model code
//! never reads a dataset directly; it goes through an [`InformationSet`],
//! which only exposes what is known on the eve of the day being forecast.

mod csv_io;
pub mod fetch;
pub mod synthetic;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Mutex;

use chrono::{Datelike, Duration, NaiveDate};
use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::{EpfError, Result, HOURS};

pub use csv_io::{normalize_calendar, parse_dataset_csv, parse_dataset_reader, write_dataset_csv, DEFAULT_DST_SLOT};
pub use fetch::{content_hash, CACHE_DIR_ENV, fetch_dataset, fetch_dataset_with, resolve_cache_dir, Manifest};

/// Length of each benchmark dataset: six 364-day years.
pub const BENCHMARK_DAYS: usize = 2184;
/// Length of each benchmark test period: the final 104 weeks.
pub const TEST_PERIOD_DAYS: usize = 104 * 7;
/// Longest calibration window used by any benchmark model (four years).
pub const MAX_WINDOW_DAYS: usize = 1456;
/// Calibration windows of the LEAR benchmark: 8 weeks, 12 weeks, 3 and 4 years.
pub const LEAR_WINDOWS: [usize; 4] = [56, 84, 1092, 1456];
/// Days lost at the start of a window to the one-week lag.
pub const MAX_LAG: usize = 7;

/// One of the five benchmark day-ahead markets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Market {
    /// Nord Pool system price.
    Np,
    /// PJM (COMED zone).
    Pjm,
    /// EPEX Belgium.
    Be,
    /// EPEX France.
    Fr,
    /// EPEX Germany.
    De,
}

impl Market {
    pub const ALL: [Market; 5] = [Market::Np, Market::Pjm, Market::Be, Market::Fr, Market::De];

    pub fn id(self) -> &'static str {
        match self {
            Market::Np => "NP",
            Market::Pjm => "PJM",
            Market::Be => "BE",
            Market::Fr => "FR",
            Market::De => "DE",
        }
    }

    /// First day of the benchmark test period.
    pub fn test_start(self) -> NaiveDate {
        let (y, m, d) = match self {
            Market::Np | Market::Pjm => (2016, 12, 27),
            Market::Be | Market::Fr => (2015, 1, 4),
            Market::De => (2016, 1, 4),
        };
        NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
    }
}

impl fmt::Display for Market {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Market {
    type Err = EpfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NP" => Ok(Market::Np),
            "PJM" => Ok(Market::Pjm),
            "BE" => Ok(Market::Be),
            "FR" => Ok(Market::Fr),
            "DE" => Ok(Market::De),
            other => Err(EpfError::Config(format!(
                "unknown market '{other}', expected one of NP, PJM, BE, FR, DE"
            ))),
        }
    }
}

/// Which of the three hourly series of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Series {
    Price,
    Exog1,
    Exog2,
}

/// Hourly prices and two exogenous day-ahead forecasts for one market.
///
/// Immutable after construction; every row is one calendar day with exactly
/// 24 finite values per series, and dates are consecutive.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketDataset {
    market_id: String,
    dates: Vec<NaiveDate>,
    prices: Array2<f64>,
    exog1: Array2<f64>,
    exog2: Array2<f64>,
}

impl MarketDataset {
    pub fn new(
        market_id: impl Into<String>,
        dates: Vec<NaiveDate>,
        prices: Array2<f64>,
        exog1: Array2<f64>,
        exog2: Array2<f64>,
    ) -> Result<Self> {
        let n = dates.len();
        for (name, m) in [("price", &prices), ("exog1", &exog1), ("exog2", &exog2)] {
            if m.dim() != (n, HOURS) {
                return Err(EpfError::Shape(format!(
                    "{name} matrix is {:?}, expected ({n}, {HOURS})",
                    m.dim()
                )));
            }
            if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
                return Err(EpfError::Schema(format!(
                    "non-finite {name} value on {}",
                    dates[pos / HOURS]
                )));
            }
        }
        for pair in dates.windows(2) {
            if pair[1] != pair[0] + Duration::days(1) {
                return Err(EpfError::Cadence(format!(
                    "dates must be consecutive: {} followed by {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(Self {
            market_id: market_id.into(),
            dates,
            prices,
            exog1,
            exog2,
        })
    }

    pub fn market_id(&self) -> &str {
        &self.market_id
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> ArrayView2<'_, f64> {
        self.prices.view()
    }

    pub fn exog1(&self) -> ArrayView2<'_, f64> {
        self.exog1.view()
    }

    pub fn exog2(&self) -> ArrayView2<'_, f64> {
        self.exog2.view()
    }

    pub fn series(&self, series: Series) -> ArrayView2<'_, f64> {
        match series {
            Series::Price => self.prices.view(),
            Series::Exog1 => self.exog1.view(),
            Series::Exog2 => self.exog2.view(),
        }
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    /// Row index of `date`, if the dataset covers it.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = self.first_date()?;
        let offset = (date - first).num_days();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    pub(crate) fn require_index(&self, date: NaiveDate) -> Result<usize> {
        self.index_of(date).ok_or_else(|| {
            EpfError::Split(format!(
                "{date} is outside the dataset span {}..{}",
                self.first_date().map(|d| d.to_string()).unwrap_or_default(),
                self.last_date().map(|d| d.to_string()).unwrap_or_default()
            ))
        })
    }

    /// A copy restricted to the first `days` rows.
    pub fn truncated(&self, days: usize) -> MarketDataset {
        let days = days.min(self.len());
        MarketDataset {
            market_id: self.market_id.clone(),
            dates: self.dates[..days].to_vec(),
            prices: self.prices.slice(ndarray::s![..days, ..]).to_owned(),
            exog1: self.exog1.slice(ndarray::s![..days, ..]).to_owned(),
            exog2: self.exog2.slice(ndarray::s![..days, ..]).to_owned(),
        }
    }

    /// Whether the dataset has the length of the five benchmark datasets.
    pub fn is_benchmark_length(&self) -> bool {
        self.len() == BENCHMARK_DAYS
    }
}

/// Contiguous range of test days.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestPeriod {
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub n_days: usize,
    start_index: usize,
}

impl TestPeriod {
    /// The `n_days` days starting at `start_date`.
    pub fn new(dataset: &MarketDataset, start_date: NaiveDate, n_days: usize) -> Result<Self> {
        let start_index = dataset.require_index(start_date)?;
        if n_days == 0 || start_index + n_days > dataset.len() {
            return Err(EpfError::Split(format!(
                "test period of {n_days} days from {start_date} does not fit the dataset"
            )));
        }
        Ok(Self {
            start_date,
            end_date: start_date + Duration::days(n_days as i64 - 1),
            n_days,
            start_index,
        })
    }

    /// Dataset row indices covered by the period.
    pub fn indices(&self) -> Range<usize> {
        self.start_index..self.start_index + self.n_days
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.n_days).map(move |i| self.start_date + Duration::days(i as i64))
    }
}

/// Everything strictly before the test period.
#[derive(Debug, Clone, Copy)]
pub struct HistoryView<'a> {
    dataset: &'a MarketDataset,
    end: usize,
}

impl<'a> HistoryView<'a> {
    pub fn len(&self) -> usize {
        self.end
    }

    pub fn is_empty(&self) -> bool {
        self.end == 0
    }

    pub fn dates(&self) -> &'a [NaiveDate] {
        &self.dataset.dates()[..self.end]
    }

    pub fn prices(&self) -> ArrayView2<'a, f64> {
        self.dataset.prices.slice(ndarray::s![..self.end, ..])
    }
}

/// Splits a dataset at `test_start`, requiring four years of history.
pub fn test_split(dataset: &MarketDataset, test_start: NaiveDate) -> Result<(HistoryView<'_>, TestPeriod)> {
    test_split_with_history(dataset, test_start, MAX_WINDOW_DAYS)
}

/// [`test_split`] with a custom minimum history length.
pub fn test_split_with_history(
    dataset: &MarketDataset,
    test_start: NaiveDate,
    min_history: usize,
) -> Result<(HistoryView<'_>, TestPeriod)> {
    let start = dataset.require_index(test_start)?;
    if start == 0 || start < min_history {
        return Err(EpfError::Split(format!(
            "only {start} days precede {test_start}, at least {} required",
            min_history.max(1)
        )));
    }
    let period = TestPeriod::new(dataset, test_start, dataset.len() - start)?;
    Ok((
        HistoryView {
            dataset,
            end: start,
        },
        period,
    ))
}

/// One attempted price read during a backtest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriceRead {
    /// Day being forecast.
    pub target: usize,
    /// Day whose prices were requested.
    pub day: usize,
}

/// Records every price read made through an [`InformationSet`].
#[derive(Debug, Default)]
pub struct AccessLog {
    reads: Mutex<Vec<PriceRead>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, read: PriceRead) {
        self.reads.lock().expect("access log poisoned").push(read);
    }

    pub fn reads(&self) -> Vec<PriceRead> {
        self.reads.lock().expect("access log poisoned").clone()
    }

    /// Reads of prices dated on or after the day being forecast.
    pub fn lookahead_reads(&self) -> Vec<PriceRead> {
        self.reads()
            .into_iter()
            .filter(|r| r.day >= r.target)
            .collect()
    }

    pub fn clear(&self) {
        self.reads.lock().expect("access log poisoned").clear();
    }
}

/// The data available when forecasting day `target`.
///
/// Prices are visible strictly before `target`; exogenous day-ahead forecasts
/// are visible up to and including `target` (they are published the day
/// before delivery).
#[derive(Debug, Clone, Copy)]
pub struct InformationSet<'a> {
    dataset: &'a MarketDataset,
    target: usize,
    log: Option<&'a AccessLog>,
}

impl<'a> InformationSet<'a> {
    pub fn new(dataset: &'a MarketDataset, target: usize) -> Result<Self> {
        if target >= dataset.len() {
            return Err(EpfError::Split(format!(
                "target index {target} beyond dataset of {} days",
                dataset.len()
            )));
        }
        Ok(Self {
            dataset,
            target,
            log: None,
        })
    }

    pub fn at_date(dataset: &'a MarketDataset, target: NaiveDate) -> Result<Self> {
        Self::new(dataset, dataset.require_index(target)?)
    }

    pub fn with_log(mut self, log: Option<&'a AccessLog>) -> Self {
        self.log = log;
        self
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn target_date(&self) -> NaiveDate {
        self.dataset.dates[self.target]
    }

    pub fn market_id(&self) -> &'a str {
        self.dataset.market_id()
    }

    pub fn date(&self, day: usize) -> Result<NaiveDate> {
        self.check_exog(day)?;
        Ok(self.dataset.dates[day])
    }

    pub fn weekday(&self, day: usize) -> Result<chrono::Weekday> {
        Ok(self.date(day)?.weekday())
    }

    /// Prices of `day`; fails for `day >= target`.
    pub fn prices(&self, day: usize) -> Result<ArrayView1<'a, f64>> {
        if let Some(log) = self.log {
            log.record(PriceRead {
                target: self.target,
                day,
            });
        }
        if day >= self.target {
            return Err(EpfError::Lookahead {
                day,
                target: self.target,
            });
        }
        Ok(self.dataset.prices.row(day))
    }

    pub fn exog1(&self, day: usize) -> Result<ArrayView1<'a, f64>> {
        self.check_exog(day)?;
        Ok(self.dataset.exog1.row(day))
    }

    pub fn exog2(&self, day: usize) -> Result<ArrayView1<'a, f64>> {
        self.check_exog(day)?;
        Ok(self.dataset.exog2.row(day))
    }

    fn check_exog(&self, day: usize) -> Result<()> {
        if day > self.target {
            return Err(EpfError::Lookahead {
                day,
                target: self.target,
            });
        }
        Ok(())
    }
}

/// The `window_days` days immediately preceding a target day.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationSlice<'a> {
    info: InformationSet<'a>,
    window_days: usize,
}

impl<'a> CalibrationSlice<'a> {
    pub fn new(info: InformationSet<'a>, window_days: usize) -> Result<Self> {
        if window_days <= MAX_LAG {
            return Err(EpfError::Slice(format!(
                "window of {window_days} days leaves no regression rows after the {MAX_LAG}-day lag"
            )));
        }
        if info.target < window_days {
            return Err(EpfError::Slice(format!(
                "window of {window_days} days needs that much history, only {} days precede {}",
                info.target,
                info.target_date()
            )));
        }
        Ok(Self { info, window_days })
    }

    pub fn info(&self) -> InformationSet<'a> {
        self.info
    }

    pub fn window_days(&self) -> usize {
        self.window_days
    }

    /// Dataset indices of the window days, oldest first.
    pub fn days(&self) -> Range<usize> {
        self.info.target - self.window_days..self.info.target
    }

    pub fn first_date(&self) -> NaiveDate {
        self.info.dataset.dates[self.days().start]
    }

    pub fn last_date(&self) -> NaiveDate {
        self.info.dataset.dates[self.days().end - 1]
    }

    /// Regression rows left once the first week is consumed by lags.
    pub fn usable_rows(&self) -> usize {
        self.window_days - MAX_LAG
    }
}

/// The calibration window of `window_days` ending the day before `target_day`.
pub fn calibration_window_slice(
    dataset: &MarketDataset,
    target_day: NaiveDate,
    window_days: usize,
) -> Result<CalibrationSlice<'_>> {
    let target = dataset
        .index_of(target_day)
        .ok_or_else(|| EpfError::Slice(format!("{target_day} is outside the dataset")))?;
    CalibrationSlice::new(InformationSet::new(dataset, target)?, window_days)
}
