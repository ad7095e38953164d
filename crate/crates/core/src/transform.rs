//! Variance-stabilizing and scaling preprocessors.
//!
//! LEAR prices go through `asinh((x - median) / MAD)`; exogenous regressors
//! are median/MAD scaled. The DNN chooses one [`ScalerKind`] for its inputs
//! and targets. All parameters are fit on calibration data only and frozen.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::{EpfError, Result};

/// Makes the MAD a consistent estimator of the standard deviation under normality.
pub const MAD_NORMAL_CONSISTENCY: f64 = 1.4826;

/// Robust center and scale of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsinhParams {
    pub center: f64,
    pub scale: f64,
}

impl AsinhParams {
    pub fn apply(&self, x: f64) -> f64 {
        apply_asinh(x, self)
    }

    pub fn invert(&self, y: f64) -> f64 {
        invert_asinh(y, self)
    }

    /// Median/MAD scaling without the asinh.
    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }

    pub fn unstandardize(&self, z: f64) -> f64 {
        self.center + self.scale * z
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mid = values.len() / 2;
    let (_, &mut upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if values.len() % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median and normal-consistent MAD of `series`; scale falls back to 1.
pub fn fit_asinh(series: impl IntoIterator<Item = f64>) -> Result<AsinhParams> {
    let mut values: Vec<f64> = series.into_iter().collect();
    if values.is_empty() {
        return Err(EpfError::Transform("cannot fit a transform on an empty series".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EpfError::Transform("series contains non-finite values".into()));
    }
    let center = median(&mut values);
    for v in values.iter_mut() {
        *v = (*v - center).abs();
    }
    let mad = median(&mut values) * MAD_NORMAL_CONSISTENCY;
    let scale = if mad > 0.0 { mad } else { 1.0 };
    Ok(AsinhParams { center, scale })
}

pub fn apply_asinh(x: f64, params: &AsinhParams) -> f64 {
    ((x - params.center) / params.scale).asinh()
}

pub fn invert_asinh(y: f64, params: &AsinhParams) -> f64 {
    params.center + params.scale * y.sinh()
}

/// Preprocessing choices for the DNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    None,
    /// Zero mean, unit standard deviation.
    Standardize,
    /// Affine map of the observed range onto [-1, 1].
    MinMax,
    MedianMad,
    AsinhMedianMad,
}

impl ScalerKind {
    pub const ALL: [ScalerKind; 5] = [
        ScalerKind::None,
        ScalerKind::Standardize,
        ScalerKind::MinMax,
        ScalerKind::MedianMad,
        ScalerKind::AsinhMedianMad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScalerKind::None => "none",
            ScalerKind::Standardize => "standardize",
            ScalerKind::MinMax => "minmax",
            ScalerKind::MedianMad => "median_mad",
            ScalerKind::AsinhMedianMad => "asinh_median_mad",
        }
    }
}

impl fmt::Display for ScalerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScalerKind {
    type Err = EpfError;

    fn from_str(s: &str) -> Result<Self> {
        ScalerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EpfError::Config(format!("unknown scaler kind '{s}'")))
    }
}

/// Per-column affine (optionally asinh) scaler.
///
/// Column `j` maps `x` to `(x - shift[j]) / scale[j]`, followed by `asinh`
/// for [`ScalerKind::AsinhMedianMad`]. Pass-through columns keep shift 0 and
/// scale 1 and never get the asinh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnScaler {
    pub kind: ScalerKind,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub passthrough: Vec<usize>,
}

impl DnnScaler {
    pub fn identity(columns: usize) -> Self {
        Self {
            kind: ScalerKind::None,
            shift: vec![0.0; columns],
            scale: vec![1.0; columns],
            passthrough: Vec::new(),
        }
    }

    /// Fits per-column parameters on `training`; `passthrough` columns are left alone.
    pub fn fit(kind: ScalerKind, training: ArrayView2<'_, f64>, passthrough: &[usize]) -> Result<Self> {
        let (rows, cols) = training.dim();
        if rows == 0 || cols == 0 {
            return Err(EpfError::Transform("cannot fit a scaler on an empty matrix".into()));
        }
        let mut shift = vec![0.0; cols];
        let mut scale = vec![1.0; cols];
        for (j, col) in training.axis_iter(Axis(1)).enumerate() {
            if passthrough.contains(&j) {
                continue;
            }
            let (s, c) = match kind {
                ScalerKind::None => (0.0, 1.0),
                ScalerKind::Standardize => {
                    let mean = col.mean().expect("non-empty");
                    let sd = col.std(0.0);
                    (mean, if sd > 0.0 { sd } else { 1.0 })
                }
                ScalerKind::MinMax => {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let half = 0.5 * (hi - lo);
                    (0.5 * (hi + lo), if half > 0.0 { half } else { 1.0 })
                }
                ScalerKind::MedianMad | ScalerKind::AsinhMedianMad => {
                    let p = fit_asinh(col.iter().copied())?;
                    (p.center, p.scale)
                }
            };
            shift[j] = s;
            scale[j] = c;
        }
        Ok(Self {
            kind,
            shift,
            scale,
            passthrough: passthrough.to_vec(),
        })
    }

    pub fn columns(&self) -> usize {
        self.shift.len()
    }

    fn uses_asinh(&self, col: usize) -> bool {
        self.kind == ScalerKind::AsinhMedianMad && !self.passthrough.contains(&col)
    }

    pub fn apply_value(&self, col: usize, x: f64) -> f64 {
        let z = (x - self.shift[col]) / self.scale[col];
        if self.uses_asinh(col) {
            z.asinh()
        } else {
            z
        }
    }

    pub fn invert_value(&self, col: usize, y: f64) -> f64 {
        let z = if self.uses_asinh(col) { y.sinh() } else { y };
        self.shift[col] + self.scale[col] * z
    }

    pub fn apply_inplace(&self, mut data: ArrayViewMut2<'_, f64>) -> Result<()> {
        self.check_width(data.ncols())?;
        for mut row in data.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.apply_value(j, *v);
            }
        }
        Ok(())
    }

    pub fn apply(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = data.to_owned();
        self.apply_inplace(out.view_mut())?;
        Ok(out)
    }

    pub fn invert(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(data.ncols())?;
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.invert_value(j, *v);
            }
        }
        Ok(out)
    }

    fn check_width(&self, cols: usize) -> Result<()> {
        if cols != self.columns() {
            return Err(EpfError::Shape(format!(
                "scaler fitted on {} columns applied to {cols}",
                self.columns()
            )));
        }
        Ok(())
    }

    /// Hash of the frozen parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.kind.hash(&mut h);
        for v in self.shift.iter().chain(&self.scale) {
            v.to_bits().hash(&mut h);
        }
        self.passthrough.hash(&mut h);
        h.finish()
    }
}
