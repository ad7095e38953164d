//! Point-forecast accuracy metrics and the naive benchmarks behind rMAE.
//!
//! Every metric averages over all (day, hour) cells of date-aligned actual
//! and forecast matrices.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::forecast::ForecastMatrix;
use crate::{EpfError, Result, HOURS};

/// Naive benchmark used to normalize rMAE / rRMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveKind {
    /// Same hour of the previous day.
    Lag1,
    /// Same hour one week earlier; captures weekly effects.
    #[default]
    Lag7,
    /// Previous day on Tue–Fri, one week earlier on Sat–Mon.
    Calendar,
}

impl NaiveKind {
    pub const ALL: [NaiveKind; 3] = [NaiveKind::Lag1, NaiveKind::Lag7, NaiveKind::Calendar];

    pub fn name(self) -> &'static str {
        match self {
            NaiveKind::Lag1 => "lag1",
            NaiveKind::Lag7 => "lag7",
            NaiveKind::Calendar => "calendar",
        }
    }

    /// How many days back the benchmark looks for `date`.
    pub fn lag_for(self, date: NaiveDate) -> i64 {
        match self {
            NaiveKind::Lag1 => 1,
            NaiveKind::Lag7 => 7,
            NaiveKind::Calendar => match date.weekday() {
                Weekday::Tue | Weekday::Wed | Weekday::Thu | Weekday::Fri => 1,
                Weekday::Sat | Weekday::Sun | Weekday::Mon => 7,
            },
        }
    }
}

impl fmt::Display for NaiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NaiveKind {
    type Err = EpfError;

    fn from_str(s: &str) -> Result<Self> {
        NaiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EpfError::Config(format!("unknown naive kind '{s}' (lag1, lag7, calendar)")))
    }
}

/// Naive forecasts for `dates` built from realised prices in `history`.
pub fn naive_forecast(history: &ForecastMatrix, dates: &[NaiveDate], kind: NaiveKind) -> Result<ForecastMatrix> {
    let mut values = Array2::zeros((dates.len(), HOURS));
    for (r, &d) in dates.iter().enumerate() {
        let source = d - Duration::days(kind.lag_for(d));
        let row = history.row_for(source).ok_or_else(|| {
            EpfError::Metric(format!("{kind} naive forecast for {d} needs the prices of {source}"))
        })?;
        values.row_mut(r).assign(&row);
    }
    ForecastMatrix::new(dates.to_vec(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mae,
    Rmse,
    Mape,
    Smape,
    Rmae,
    Rrmse,
    Mase,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Mae,
        Metric::Rmse,
        Metric::Mape,
        Metric::Smape,
        Metric::Rmae,
        Metric::Rrmse,
        Metric::Mase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "MAE",
            Metric::Rmse => "RMSE",
            Metric::Mape => "MAPE",
            Metric::Smape => "sMAPE",
            Metric::Rmae => "rMAE",
            Metric::Rrmse => "rRMSE",
            Metric::Mase => "MASE",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = EpfError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EpfError::Config(format!("unknown metric '{s}'")))
    }
}

/// What MAPE does with cells whose actual price is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPricePolicy {
    /// Drop the cell and count it.
    #[default]
    Exclude,
    /// Use this value as the cell's percentage error.
    Sentinel(f64),
}

/// Extra inputs some metrics need.
#[derive(Debug, Clone, Default)]
pub struct MetricContext {
    pub naive: NaiveKind,
    /// Realised prices from which naive benchmarks are built; must reach
    /// seven days before the first scored date. Defaults to the actuals.
    pub history: Option<ForecastMatrix>,
    /// In-sample prices in time order (hour-major flattening) for MASE.
    pub in_sample: Option<Vec<f64>>,
    /// Lag of the in-sample naive used by MASE: 1 (default) or e.g. 168 for
    /// the weekly seasonal variant.
    pub mase_lag: Option<usize>,
    pub zero_price: ZeroPricePolicy,
}

fn check_aligned(actual: ArrayView2<'_, f64>, forecast: ArrayView2<'_, f64>) -> Result<()> {
    if actual.dim() != forecast.dim() {
        return Err(EpfError::Shape(format!(
            "actuals are {:?} but forecasts are {:?}",
            actual.dim(),
            forecast.dim()
        )));
    }
    if actual.is_empty() {
        return Err(EpfError::Metric("no cells to score".into()));
    }
    Ok(())
}

pub fn mae(actual: ArrayView2<'_, f64>, forecast: ArrayView2<'_, f64>) -> Result<f64> {
    check_aligned(actual, forecast)?;
    let sum = Zip::from(&actual).and(&forecast).fold(0.0, |acc, a, f| acc + (a - f).abs());
    Ok(sum / actual.len() as f64)
}

pub fn rmse(actual: ArrayView2<'_, f64>, forecast: ArrayView2<'_, f64>) -> Result<f64> {
    check_aligned(actual, forecast)?;
    let sum = Zip::from(&actual).and(&forecast).fold(0.0, |acc, a, f| acc + (a - f).powi(2));
    Ok((sum / actual.len() as f64).sqrt())
}

/// MAPE as a fraction (not percent), with the number of excluded cells.
pub fn mape(actual: ArrayView2<'_, f64>, forecast: ArrayView2<'_, f64>, zero: ZeroPricePolicy) -> Result<(f64, usize)> {
    check_aligned(actual, forecast)?;
    let (mut sum, mut used, mut excluded) = (0.0, 0usize, 0usize);
    Zip::from(&actual).and(&forecast).for_each(|&a, &f| {
        if a == 0.0 {
            match zero {
                ZeroPricePolicy::Exclude => excluded += 1,
                ZeroPricePolicy::Sentinel(v) => {
                    sum += v;
                    used += 1;
                }
            }
        } else {
            sum += (a - f).abs() / a.abs();
            used += 1;
        }
    });
    if used == 0 {
        return Err(EpfError::Metric("MAPE undefined: every actual price is zero".into()));
    }
    Ok((sum / used as f64, excluded))
}

/// sMAPE as a fraction; cells where both values are zero count as zero error.
pub fn smape(actual: ArrayView2<'_, f64>, forecast: ArrayView2<'_, f64>) -> Result<f64> {
    check_aligned(actual, forecast)?;
    let sum = Zip::from(&actual).and(&forecast).fold(0.0, |acc, &a, &f| {
        let denom = a.abs() + f.abs();
        if denom == 0.0 {
            acc
        } else {
            acc + 2.0 * (a - f).abs() / denom
        }
    });
    Ok(sum / actual.len() as f64)
}

/// Out-of-sample MAE over the in-sample MAE of the lag-`lag` naive forecast.
pub fn mase(actual: ArrayView2<'_, f64>, forecast: ArrayView2<'_, f64>, in_sample: &[f64], lag: usize) -> Result<f64> {
    if lag == 0 || in_sample.len() <= lag {
        return Err(EpfError::Metric(format!(
            "MASE needs more than {lag} in-sample values, got {}",
            in_sample.len()
        )));
    }
    let scale = in_sample.windows(lag + 1).map(|w| (w[lag] - w[0]).abs()).sum::<f64>() / (in_sample.len() - lag) as f64;
    if scale == 0.0 {
        return Err(EpfError::Metric("MASE undefined: in-sample naive error is zero".into()));
    }
    Ok(mae(actual, forecast)? / scale)
}

/// Naive benchmark for `dates`, from the context history or else the actuals.
fn naive_values(actuals: &ForecastMatrix, dates: &[NaiveDate], ctx: &MetricContext) -> Result<ForecastMatrix> {
    naive_forecast(ctx.history.as_ref().unwrap_or(actuals), dates, ctx.naive)
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if den == 0.0 {
        return Err(EpfError::Metric(format!("{what} undefined: the naive benchmark is perfect")));
    }
    Ok(num / den)
}

/// Rows of `actuals` matching the forecast's dates.
fn aligned_actuals(actuals: &ForecastMatrix, forecast: &ForecastMatrix) -> Result<ForecastMatrix> {
    if actuals.dates() == forecast.dates() {
        return Ok(actuals.clone());
    }
    actuals
        .select(forecast.dates())
        .map_err(|e| EpfError::Shape(format!("actuals do not cover the forecast dates: {e}")))
}

/// One metric of `forecast` against `actuals` (matched by date).
pub fn score(metric: Metric, actuals: &ForecastMatrix, forecast: &ForecastMatrix, ctx: &MetricContext) -> Result<f64> {
    let act = aligned_actuals(actuals, forecast)?;
    let (a, f) = (act.values(), forecast.values());
    match metric {
        Metric::Mae => mae(a, f),
        Metric::Rmse => rmse(a, f),
        Metric::Mape => Ok(mape(a, f, ctx.zero_price)?.0),
        Metric::Smape => smape(a, f),
        Metric::Rmae => {
            let naive = naive_values(actuals, forecast.dates(), ctx)?;
            ratio(mae(a, f)?, mae(a, naive.values())?, "rMAE")
        }
        Metric::Rrmse => {
            let naive = naive_values(actuals, forecast.dates(), ctx)?;
            ratio(rmse(a, f)?, rmse(a, naive.values())?, "rRMSE")
        }
        Metric::Mase => {
            let in_sample = ctx
                .in_sample
                .as_deref()
                .ok_or_else(|| EpfError::Metric("MASE requires an in-sample series".into()))?;
            mase(a, f, in_sample, ctx.mase_lag.unwrap_or(1))
        }
    }
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub naive: NaiveKind,
    pub rows: Vec<MetricRow>,
    /// Cells left out of MAPE (zero actual price), per model.
    pub mape_excluded: BTreeMap<String, usize>,
}

impl EvaluationReport {
    pub fn value(&self, model: &str, metric: Metric) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.metric == metric.name())
            .map(|r| r.value)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("model,metric,value\n");
        for r in &self.rows {
            out += &format!("{},{},{}\n", csv_field(&r.model), r.metric, r.value);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| EpfError::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| EpfError::io(path, e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Scores every model on MAE, RMSE, MAPE, sMAPE, rMAE and rRMSE (plus MASE
/// when the context carries an in-sample series).
pub fn evaluate(models: &[(String, ForecastMatrix)], actuals: &ForecastMatrix, ctx: &MetricContext) -> Result<EvaluationReport> {
    let mut report = EvaluationReport {
        naive: ctx.naive,
        ..Default::default()
    };
    let mut metrics = vec![Metric::Mae, Metric::Rmse, Metric::Mape, Metric::Smape, Metric::Rmae, Metric::Rrmse];
    if ctx.in_sample.is_some() {
        metrics.push(Metric::Mase);
    }
    for (name, forecast) in models {
        let act = aligned_actuals(actuals, forecast)?;
        let (m, r) = (mae(act.values(), forecast.values())?, rmse(act.values(), forecast.values())?);
        if m > r * (1.0 + 1e-12) {
            return Err(EpfError::Numeric(format!("MAE {m} exceeds RMSE {r} for {name}")));
        }
        let (_, excluded) = mape(act.values(), forecast.values(), ctx.zero_price)?;
        report.mape_excluded.insert(name.clone(), excluded);
        for &metric in &metrics {
            report.rows.push(MetricRow {
                model: name.clone(),
                metric: metric.name().to_string(),
                value: score(metric, actuals, forecast, ctx)?,
            });
        }
    }
    Ok(report)
}
