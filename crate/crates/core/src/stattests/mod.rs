//! Diebold-Mariano and Giacomini-White tests of forecast accuracy.
//!
//! Both work on a loss differential Δ^{A,B} = L(ε^A) − L(ε^B) and report
//! one-sided p-values where a small value means forecast B is significantly
//! more accurate than forecast A.

mod chessboard;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub use chessboard::{cell_color, render_chessboard, write_chessboard_svg, CHESSBOARD_LIMIT};

use crate::forecast::ForecastMatrix;
use crate::{EpfError, Result, HOURS};

/// Loss exponent / vector norm: absolute (1) or squared (2) errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl Norm {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            _ => Err(EpfError::Config(format!("norm p must be 1 or 2, got {p}"))),
        }
    }

    pub fn p(self) -> u32 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// One value per day: ‖ε^A_d‖_p − ‖ε^B_d‖_p.
    Multivariate,
    /// One value per day for a single hour: |ε^A_{d,h}|^p − |ε^B_{d,h}|^p.
    Univariate { hour: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossDifferential {
    pub values: Vec<f64>,
    pub norm: Norm,
    pub variant: Variant,
}

/// Prediction errors ε = p − p̂, matched by date.
pub fn prediction_errors(actuals: &ForecastMatrix, forecast: &ForecastMatrix) -> Result<Array2<f64>> {
    let act = if actuals.dates() == forecast.dates() {
        actuals.clone()
    } else {
        actuals.select(forecast.dates())?
    };
    Ok(&act.values() - &forecast.values())
}

pub fn loss_differential(
    err_a: ArrayView2<'_, f64>,
    err_b: ArrayView2<'_, f64>,
    norm: Norm,
    variant: Variant,
) -> Result<LossDifferential> {
    if err_a.dim() != err_b.dim() || err_a.ncols() != HOURS {
        return Err(EpfError::Shape(format!(
            "error matrices are {:?} and {:?}; both must be N × {HOURS}",
            err_a.dim(),
            err_b.dim()
        )));
    }
    let values = match variant {
        Variant::Multivariate => {
            let day_norm = |e: ArrayView2<'_, f64>| -> Vec<f64> {
                e.axis_iter(Axis(0))
                    .map(|row| match norm {
                        Norm::L1 => row.iter().map(|v| v.abs()).sum(),
                        Norm::L2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    })
                    .collect()
            };
            day_norm(err_a).into_iter().zip(day_norm(err_b)).map(|(a, b)| a - b).collect()
        }
        Variant::Univariate { hour } => {
            if hour >= HOURS {
                return Err(EpfError::Shape(format!("hour {hour} out of range")));
            }
            let loss = |v: f64| v.abs().powi(norm.p() as i32);
            err_a
                .column(hour)
                .iter()
                .zip(err_b.column(hour))
                .map(|(a, b)| loss(*a) - loss(*b))
                .collect()
        }
    };
    Ok(LossDifferential { values, norm, variant })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case")]
pub enum TestKind {
    DieboldMariano,
    /// Conditional predictive ability with `q` lags of Δ as instruments.
    GiacominiWhite { q: usize },
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestKind::DieboldMariano => write!(f, "DM"),
            TestKind::GiacominiWhite { q } => write!(f, "GW(q={q})"),
        }
    }
}

impl FromStr for TestKind {
    type Err = EpfError;

    /// `dm`, `gw` (q = 1) or `gw:<q>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "dm" => Ok(TestKind::DieboldMariano),
            "gw" => Ok(TestKind::GiacominiWhite { q: 1 }),
            _ => lower
                .strip_prefix("gw:")
                .and_then(|q| q.parse().ok())
                .map(|q| TestKind::GiacominiWhite { q })
                .ok_or_else(|| EpfError::Config(format!("unknown test '{s}' (dm, gw, gw:<q>)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    /// DM: 1 − Φ(DM). GW: χ² upper tail of the Wald statistic.
    pub p_value: f64,
    /// One-sided p-value for "B is more accurate than A".
    pub directional_p: f64,
    pub n: usize,
}

impl TestResult {
    pub fn direction_note(&self) -> String {
        format!("B better than A at p = {:.4}", self.directional_p)
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_variation(x: &[f64]) -> Result<()> {
    let (mean, sd) = mean_sd(x);
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(sd > 1e-12 * scale.max(mean.abs())) || scale == 0.0 {
        return Err(EpfError::Degenerate(
            "loss differential has zero variance (identical or constant-gap forecasts)".into(),
        ));
    }
    Ok(())
}

/// DM = √N μ̂/σ̂ with p = 1 − Φ(DM).
pub fn dm_test(delta: &LossDifferential) -> Result<TestResult> {
    let x = &delta.values;
    if x.len() < 2 {
        return Err(EpfError::Shape("DM test needs at least two observations".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EpfError::Numeric("non-finite loss differential".into()));
    }
    check_variation(x)?;
    let (mean, sd) = mean_sd(x);
    let stat = (x.len() as f64).sqrt() * mean / sd;
    let p = 1.0 - Normal::standard().cdf(stat);
    Ok(TestResult {
        kind: TestKind::DieboldMariano,
        statistic: stat,
        p_value: p,
        directional_p: p,
        n: x.len(),
    })
}

/// Wald form of the conditional predictive ability test.
///
/// Instruments X_{d−1} = [1, Δ_{d−1}, …, Δ_{d−q}], z_d = X_{d−1} Δ_d,
/// T = n z̄ᵀ Ω̂⁻¹ z̄ with Ω̂ = (1/n) Σ z_d z_dᵀ, referred to χ² with q + 1
/// degrees of freedom (one per instrument). The directional p-value is the
/// tail probability when mean(Δ) > 0 and 1 otherwise.
pub fn gw_test(delta: &LossDifferential, q: usize) -> Result<TestResult> {
    let x = &delta.values;
    if x.len() <= q + 10 {
        return Err(EpfError::Shape(format!(
            "GW test with q = {q} needs more than {} observations, got {}",
            q + 10,
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EpfError::Numeric("non-finite loss differential".into()));
    }
    check_variation(x)?;
    let k = q + 1;
    let n = x.len() - q;
    let mut z = DMatrix::<f64>::zeros(n, k);
    for (r, d) in (q..x.len()).enumerate() {
        z[(r, 0)] = x[d];
        for l in 1..=q {
            z[(r, l)] = x[d - l] * x[d];
        }
    }
    let zbar = DVector::from_iterator(k, (0..k).map(|c| z.column(c).mean()));
    let omega = z.transpose() * &z / n as f64;
    let chol = omega
        .clone()
        .cholesky()
        .ok_or_else(|| EpfError::Conditioning("GW covariance matrix is singular".into()))?;
    let eig = omega.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(lo > 1e-12 * hi) {
        return Err(EpfError::Conditioning(format!(
            "GW covariance matrix is ill-conditioned (eigenvalues {lo:e} .. {hi:e})"
        )));
    }
    let stat = n as f64 * zbar.dot(&chol.solve(&zbar));
    let chi = ChiSquared::new(k as f64).map_err(|e| EpfError::Numeric(e.to_string()))?;
    let p = (1.0 - chi.cdf(stat)).clamp(0.0, 1.0);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    Ok(TestResult {
        kind: TestKind::GiacominiWhite { q },
        statistic: stat,
        p_value: p,
        directional_p: if mean > 0.0 { p } else { 1.0 },
        n,
    })
}

pub fn run_test(delta: &LossDifferential, kind: TestKind) -> Result<TestResult> {
    match kind {
        TestKind::DieboldMariano => dm_test(delta),
        TestKind::GiacominiWhite { q } => gw_test(delta, q),
    }
}

/// Hour-by-hour tests; `None` marks an hour with a degenerate differential.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateSuite {
    pub results: Vec<Option<TestResult>>,
    /// Hours where B is significantly better at the 5% level.
    pub rejections: usize,
}

pub fn univariate_suite(
    err_a: ArrayView2<'_, f64>,
    err_b: ArrayView2<'_, f64>,
    norm: Norm,
    kind: TestKind,
) -> Result<UnivariateSuite> {
    let mut results = Vec::with_capacity(HOURS);
    for hour in 0..HOURS {
        let delta = loss_differential(err_a, err_b, norm, Variant::Univariate { hour })?;
        match run_test(&delta, kind) {
            Ok(r) => results.push(Some(r)),
            Err(EpfError::Degenerate(_)) | Err(EpfError::Conditioning(_)) => results.push(None),
            Err(e) => return Err(e),
        }
    }
    let rejections = results.iter().flatten().filter(|r| r.directional_p < 0.05).count();
    Ok(UnivariateSuite { results, rejections })
}

/// 24 hourly DM tests.
pub fn dm_univariate_suite(err_a: ArrayView2<'_, f64>, err_b: ArrayView2<'_, f64>, norm: Norm) -> Result<UnivariateSuite> {
    univariate_suite(err_a, err_b, norm, TestKind::DieboldMariano)
}

/// Square matrix of directional p-values; `values[i][j]` tests whether model
/// `j` (columns, X-axis) is significantly more accurate than model `i`.
/// Blank (`None`) on the diagonal and for degenerate pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl PValueMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for name in &self.names {
            out.push(',');
            out += &csv_field(name);
        }
        out.push('\n');
        for (i, row) in self.values.iter().enumerate() {
            out += &csv_field(&self.names[i]);
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    out += &v.to_string();
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| EpfError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| EpfError::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let mut records = rdr.records();
        let parse_err = |line: usize, message: String| EpfError::Parse { line, message };
        let header = records
            .next()
            .ok_or_else(|| parse_err(1, "empty p-value file".into()))?
            .map_err(|e| parse_err(1, e.to_string()))?;
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut values = Vec::new();
        for (i, rec) in records.enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            if rec.len() != names.len() + 1 || names.get(i).map(String::as_str) != Some(&rec[0]) {
                return Err(parse_err(line, "row does not match the header".into()));
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|c| {
                    if c.trim().is_empty() {
                        Ok(None)
                    } else {
                        c.trim()
                            .parse::<f64>()
                            .map(Some)
                            .map_err(|_| parse_err(line, format!("invalid p-value '{c}'")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        if values.len() != names.len() {
            return Err(EpfError::Schema(format!(
                "{} rows for {} models",
                values.len(),
                names.len()
            )));
        }
        Ok(Self { names, values })
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Multivariate test for every ordered pair of forecasts.
pub fn pairwise_matrix(
    forecasts: &[(String, ForecastMatrix)],
    actuals: &ForecastMatrix,
    kind: TestKind,
    norm: Norm,
) -> Result<PValueMatrix> {
    let k = forecasts.len();
    if let Some((_, first)) = forecasts.first() {
        if let Some((name, _)) = forecasts.iter().find(|(_, f)| f.dates() != first.dates()) {
            return Err(EpfError::Shape(format!("forecast '{name}' covers different dates")));
        }
    }
    let errors: Vec<Array2<f64>> = forecasts
        .iter()
        .map(|(_, f)| prediction_errors(actuals, f))
        .collect::<Result<_>>()?;
    let cells: Vec<((usize, usize), Option<f64>)> = (0..k * k)
        .into_par_iter()
        .filter(|c| c / k != c % k)
        .map(|c| {
            let (i, j) = (c / k, c % k);
            let delta = loss_differential(errors[i].view(), errors[j].view(), norm, Variant::Multivariate)?;
            match run_test(&delta, kind) {
                Ok(r) => Ok(((i, j), Some(r.directional_p))),
                Err(EpfError::Degenerate(_)) | Err(EpfError::Conditioning(_)) => Ok(((i, j), None)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut values = vec![vec![None; k]; k];
    for ((i, j), p) in cells {
        values[i][j] = p;
    }
    Ok(PValueMatrix {
        names: forecasts.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}
