//! LEAR: per-hour LASSO-estimated autoregressive models.
//!
//! Each test day the 24 hourly regressions are refit on the calibration
//! window. The penalty for each hour comes from the LARS path and in-sample
//! AIC; the final coefficients come from coordinate descent at that penalty.

mod cd;
mod lars;

use std::path::PathBuf;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cd::{lasso_cd, lasso_cd_gram, lasso_objective, soft_threshold, LassoFit, LassoOptions};
pub use lars::{
    aic, gram, lars_path, lars_path_with_gram, select_breakpoint_aic, select_lambda_aic, Breakpoint, LarsOptions,
    LarsPath, PathEvent,
};

use crate::backtest::{run_backtest, BacktestOptions, BacktestOutput, DailyForecaster};
use crate::data::{CalibrationSlice, InformationSet, MarketDataset, Series, TestPeriod};
use crate::features::{build_lear_design, build_lear_row, lear_column_kind, ColumnKind, LEAR_FEATURES};
use crate::transform::{fit_asinh, AsinhParams};
use crate::{EpfError, Result, HOURS};

/// How the exogenous regressors are scaled before the solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExogTransform {
    /// `(x - median) / MAD`.
    #[default]
    MedianMad,
    /// Same asinh transform as prices.
    Asinh,
}

impl std::str::FromStr for ExogTransform {
    type Err = EpfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median_mad" => Ok(Self::MedianMad),
            "asinh" => Ok(Self::Asinh),
            _ => Err(EpfError::Config(format!("unknown exogenous transform '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearConfig {
    pub window_days: usize,
    pub exog_transform: ExogTransform,
    pub lasso: LassoOptions,
    /// Start coordinate descent from the previous day's coefficients instead
    /// of the LARS solution. Off by default: with more regressors than rows
    /// the minimizer need not be unique, and a warm start makes each day's
    /// fit depend on how the backtest was run (sequential, parallel, resumed).
    pub warm_start: bool,
    /// Solve the 24 hours on the rayon pool.
    pub parallel_hours: bool,
}

impl LearConfig {
    pub fn new(window_days: usize) -> Self {
        Self {
            window_days,
            exog_transform: ExogTransform::default(),
            lasso: LassoOptions::default(),
            warm_start: false,
            parallel_hours: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourModel {
    /// Coefficients on the transformed regressors (zero for dropped columns).
    pub theta: Array1<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub n_active: usize,
}

impl HourModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.theta.iter().zip(x).map(|(t, v)| t * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearModel {
    pub hour_models: Vec<HourModel>,
    pub price_params: AsinhParams,
    pub exog1_params: AsinhParams,
    pub exog2_params: AsinhParams,
    pub exog_transform: ExogTransform,
    pub window_days: usize,
}

impl LearModel {
    /// Maps a raw 247-value LEAR row to the model's regressor space, in place.
    pub fn transform_row(&self, row: &mut [f64]) {
        for (col, v) in row.iter_mut().enumerate() {
            *v = match lear_column_kind(col) {
                ColumnKind::Series(Series::Price) => self.price_params.apply(*v),
                ColumnKind::Series(Series::Exog1) => exog_value(&self.exog1_params, self.exog_transform, *v),
                ColumnKind::Series(Series::Exog2) => exog_value(&self.exog2_params, self.exog_transform, *v),
                ColumnKind::Weekday => *v,
            };
        }
    }
}

fn exog_value(p: &AsinhParams, how: ExogTransform, x: f64) -> f64 {
    match how {
        ExogTransform::MedianMad => p.standardize(x),
        ExogTransform::Asinh => p.apply(x),
    }
}

/// Column means and population standard deviations; columns whose spread is
/// negligible relative to their level are reported as `None`.
fn column_scaling(x: &Array2<f64>) -> Vec<Option<(f64, f64)>> {
    let n = x.nrows() as f64;
    x.axis_iter(Axis(1))
        .map(|c| {
            let m = c.sum() / n;
            let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            (sd > 1e-10 * m.abs().max(1.0)).then_some((m, sd))
        })
        .collect()
}

/// Fits the 24 hourly models on a calibration window.
///
/// `warm` supplies starting coefficients (typically yesterday's model).
pub fn fit_day(slice: &CalibrationSlice<'_>, config: &LearConfig, warm: Option<&LearModel>) -> Result<LearModel> {
    let info = slice.info();
    let days = slice.days();
    let series_values = |series: Series| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(days.len() * HOURS);
        for d in days.clone() {
            let row = match series {
                Series::Price => info.prices(d)?,
                Series::Exog1 => info.exog1(d)?,
                Series::Exog2 => info.exog2(d)?,
            };
            out.extend(row.iter());
        }
        Ok(out)
    };
    let price_params = fit_asinh(series_values(Series::Price)?)?;
    let exog1_params = fit_asinh(series_values(Series::Exog1)?)?;
    let exog2_params = fit_asinh(series_values(Series::Exog2)?)?;

    let (mut x, mut y) = build_lear_design(slice)?;
    let mut model = LearModel {
        hour_models: Vec::new(),
        price_params,
        exog1_params,
        exog2_params,
        exog_transform: config.exog_transform,
        window_days: slice.window_days(),
    };
    for mut row in x.rows_mut() {
        model.transform_row(row.as_slice_mut().expect("standard layout"));
    }
    y.mapv_inplace(|v| price_params.apply(v));

    let scaling = column_scaling(&x);
    let kept: Vec<usize> = (0..LEAR_FEATURES).filter(|&j| scaling[j].is_some()).collect();
    let n = x.nrows();
    let mut z = Array2::<f64>::zeros((n, kept.len()));
    for (k, &j) in kept.iter().enumerate() {
        let (m, sd) = scaling[j].expect("kept");
        z.column_mut(k).assign(&x.column(j).mapv(|v| (v - m) / sd));
    }
    let g = gram(z.view());

    let solve_hour = |h: usize| -> Result<HourModel> {
        let yh = y.column(h);
        let y_mean = yh.sum() / n as f64;
        let yc = yh.mapv(|v| v - y_mean);
        let path = lars_path_with_gram(z.view(), g.view(), yc.view(), &LarsOptions::default())?;
        let lambda = select_lambda_aic(&path, n)?;
        // Yesterday's coefficients when available, otherwise the path solution itself.
        let init = match warm.filter(|_| config.warm_start) {
            Some(w) => Array1::from_iter(kept.iter().map(|&j| w.hour_models[h].theta[j] * scaling[j].expect("kept").1)),
            None => path.theta_at(lambda),
        };
        let fit = lasso_cd_gram(
            g.view(),
            z.t().dot(&yc).view(),
            yc.dot(&yc),
            n,
            lambda,
            &config.lasso,
            Some(init.view()),
        )?;
        let mut theta = Array1::zeros(LEAR_FEATURES);
        let mut intercept = y_mean;
        for (k, &j) in kept.iter().enumerate() {
            let (m, sd) = scaling[j].expect("kept");
            theta[j] = fit.theta[k] / sd;
            intercept -= theta[j] * m;
        }
        Ok(HourModel {
            n_active: theta.iter().filter(|&&t| t != 0.0).count(),
            theta,
            intercept,
            lambda,
        })
    };
    model.hour_models = if config.parallel_hours {
        (0..HOURS).into_par_iter().map(solve_hour).collect::<Result<_>>()?
    } else {
        (0..HOURS).map(solve_hour).collect::<Result<_>>()?
    };
    Ok(model)
}

/// Day-ahead forecast of the information set's target day.
pub fn forecast_day(model: &LearModel, info: &InformationSet<'_>) -> Result<[f64; HOURS]> {
    if model.hour_models.len() != HOURS {
        return Err(EpfError::Shape(format!("LEAR model has {} hour models", model.hour_models.len())));
    }
    let mut row = build_lear_row(info, info.target())?.values;
    model.transform_row(&mut row);
    let mut out = [0.0; HOURS];
    for (o, hm) in out.iter_mut().zip(&model.hour_models) {
        *o = model.price_params.invert(hm.predict(&row));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(EpfError::Numeric(format!("non-finite LEAR forecast for {}", info.target_date())));
    }
    Ok(out)
}

/// Refits on the trailing window every day.
pub struct LearForecaster {
    pub config: LearConfig,
}

impl DailyForecaster for LearForecaster {
    type State = Option<LearModel>;

    fn forecast_day(&self, info: &InformationSet<'_>, state: &mut Option<LearModel>) -> Result<[f64; HOURS]> {
        let slice = CalibrationSlice::new(*info, self.config.window_days)?;
        let model = fit_day(&slice, &self.config, state.as_ref())?;
        let out = forecast_day(&model, info)?;
        *state = Some(model);
        Ok(out)
    }
}

/// Daily-recalibrated LEAR forecasts over `period`.
pub fn backtest_lear(
    dataset: &MarketDataset,
    period: &TestPeriod,
    config: &LearConfig,
    opts: &BacktestOptions,
) -> Result<BacktestOutput> {
    let mut config = config.clone();
    if opts.jobs > 1 {
        // Days run out of order, so there is no previous day to start from.
        config.warm_start = false;
    }
    run_backtest(&LearForecaster { config }, dataset, period, opts)
}

/// Conventional file name for a LEAR forecast, e.g. `NP_lear_56.csv`.
pub fn forecast_file_name(market_id: &str, window_days: usize) -> PathBuf {
    PathBuf::from(format!("{market_id}_lear_{window_days}.csv"))
}
