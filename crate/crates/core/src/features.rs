//! Feature maps for the LEAR regression and the DNN input layer.
//!
//! Both models draw on the same ten 24-value day blocks plus a weekday
//! indicator. The block order is fixed:
//!
//! | index (0-based) | block            |
//! |-----------------|------------------|
//! | 0..24           | prices, d−1      |
//! | 24..48          | prices, d−2      |
//! | 48..72          | prices, d−3      |
//! | 72..96          | prices, d−7      |
//! | 96..120         | exog 1, d        |
//! | 120..144        | exog 2, d        |
//! | 144..168        | exog 1, d−1      |
//! | 168..192        | exog 2, d−1      |
//! | 192..216        | exog 1, d−7      |
//! | 216..240        | exog 2, d−7      |
//! | 240..247        | weekday one-hot  |
//!
//! The DNN row uses the same blocks but a single weekday value in 1..=7.

use chrono::{Datelike, NaiveDate};
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{CalibrationSlice, InformationSet, Series, MAX_LAG};
use crate::{EpfError, Result, HOURS};

/// Length of the LEAR regression row.
pub const LEAR_FEATURES: usize = 247;
/// Length of the DNN input row with every block enabled.
pub const DNN_FEATURES: usize = 241;
/// Number of 24-value day blocks.
pub const DAY_BLOCKS: usize = 10;

/// One 24-value block of the feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub series: Series,
    /// Days before the target day (0 = the target day itself).
    pub lag: usize,
}

/// The ten day blocks in feature order.
pub const BLOCKS: [Block; DAY_BLOCKS] = [
    Block { series: Series::Price, lag: 1 },
    Block { series: Series::Price, lag: 2 },
    Block { series: Series::Price, lag: 3 },
    Block { series: Series::Price, lag: 7 },
    Block { series: Series::Exog1, lag: 0 },
    Block { series: Series::Exog2, lag: 0 },
    Block { series: Series::Exog1, lag: 1 },
    Block { series: Series::Exog2, lag: 1 },
    Block { series: Series::Exog1, lag: 7 },
    Block { series: Series::Exog2, lag: 7 },
];

/// What a LEAR column holds, for preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Series(Series),
    Weekday,
}

/// Kind of LEAR column `col` (0-based).
pub fn lear_column_kind(col: usize) -> ColumnKind {
    if col < DAY_BLOCKS * HOURS {
        ColumnKind::Series(BLOCKS[col / HOURS].series)
    } else {
        ColumnKind::Weekday
    }
}

/// Weekday one-hot vector (Monday first) and index in 1..=7 (Monday = 1).
pub fn weekday_encoding(date: NaiveDate) -> ([f64; 7], u8) {
    let pos = date.weekday().num_days_from_monday() as usize;
    let mut dummies = [0.0; 7];
    dummies[pos] = 1.0;
    (dummies, pos as u8 + 1)
}

fn block_values<'a>(info: &InformationSet<'a>, day: usize, block: Block) -> Result<ArrayView1<'a, f64>> {
    let src = day.checked_sub(block.lag).ok_or_else(|| {
        EpfError::Feature(format!(
            "day index {day} lacks the {}-day lag",
            block.lag
        ))
    })?;
    match block.series {
        Series::Price => info.prices(src),
        Series::Exog1 => info.exog1(src),
        Series::Exog2 => info.exog2(src),
    }
}

/// One LEAR regression row.
#[derive(Debug, Clone, PartialEq)]
pub struct LearRow {
    pub values: Vec<f64>,
}

/// Writes the LEAR row of `day` into `out` (length 247).
pub fn fill_lear_row(info: &InformationSet<'_>, day: usize, out: &mut [f64]) -> Result<()> {
    debug_assert_eq!(out.len(), LEAR_FEATURES);
    if day < MAX_LAG {
        return Err(EpfError::Feature(format!(
            "day index {day} lacks the {MAX_LAG}-day lag"
        )));
    }
    for (b, block) in BLOCKS.iter().enumerate() {
        let src = block_values(info, day, *block)?;
        out[b * HOURS..(b + 1) * HOURS]
            .iter_mut()
            .zip(src.iter())
            .for_each(|(o, &v)| *o = v);
    }
    let (dummies, _) = weekday_encoding(info.date(day)?);
    out[DAY_BLOCKS * HOURS..].copy_from_slice(&dummies);
    Ok(())
}

/// The LEAR regression row for `day` (usually the information set's target).
pub fn build_lear_row(info: &InformationSet<'_>, day: usize) -> Result<LearRow> {
    let mut values = vec![0.0; LEAR_FEATURES];
    fill_lear_row(info, day, &mut values)?;
    Ok(LearRow { values })
}

/// Regression design of a calibration window.
///
/// One row per window day from the eighth onwards; `y` holds that day's prices.
pub fn build_lear_design(slice: &CalibrationSlice<'_>) -> Result<(Array2<f64>, Array2<f64>)> {
    let info = slice.info();
    let days = slice.days();
    let rows = slice.usable_rows();
    let mut x = Array2::zeros((rows, LEAR_FEATURES));
    let mut y = Array2::zeros((rows, HOURS));
    for (r, day) in (days.start + MAX_LAG..days.end).enumerate() {
        let mut row = x.row_mut(r);
        fill_lear_row(&info, day, row.as_slice_mut().expect("standard layout"))?;
        y.row_mut(r).assign(&info.prices(day)?);
    }
    Ok((x, y))
}

/// Block selection flags for the DNN input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMask {
    /// One flag per entry of [`BLOCKS`].
    pub blocks: [bool; DAY_BLOCKS],
    pub weekday: bool,
}

impl FeatureMask {
    pub fn full() -> Self {
        Self {
            blocks: [true; DAY_BLOCKS],
            weekday: true,
        }
    }

    pub fn none() -> Self {
        Self {
            blocks: [false; DAY_BLOCKS],
            weekday: false,
        }
    }

    /// Mask from the eleven flags in feature order (weekday last).
    pub fn from_flags(flags: [bool; 11]) -> Self {
        let mut blocks = [false; DAY_BLOCKS];
        blocks.copy_from_slice(&flags[..DAY_BLOCKS]);
        Self {
            blocks,
            weekday: flags[DAY_BLOCKS],
        }
    }

    pub fn flags(&self) -> [bool; 11] {
        let mut f = [false; 11];
        f[..DAY_BLOCKS].copy_from_slice(&self.blocks);
        f[DAY_BLOCKS] = self.weekday;
        f
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.iter().any(|&b| b) || self.weekday {
            Ok(())
        } else {
            Err(EpfError::Feature("feature mask selects no inputs".into()))
        }
    }

    pub fn row_len(&self) -> usize {
        self.blocks.iter().filter(|&&b| b).count() * HOURS + usize::from(self.weekday)
    }

    /// Largest lag needed by the active blocks.
    pub fn max_lag(&self) -> usize {
        BLOCKS
            .iter()
            .zip(self.blocks)
            .filter(|(_, on)| *on)
            .map(|(b, _)| b.lag)
            .max()
            .unwrap_or(0)
    }

    /// Column of the weekday value in the DNN row, when selected.
    pub fn weekday_column(&self) -> Option<usize> {
        self.weekday.then(|| self.row_len() - 1)
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self::full()
    }
}

/// One DNN input row.
#[derive(Debug, Clone, PartialEq)]
pub struct DnnRow {
    pub values: Vec<f64>,
    pub mask: FeatureMask,
}

/// Writes the DNN row of `day` under `mask` into `out`.
pub fn fill_dnn_row(info: &InformationSet<'_>, day: usize, mask: &FeatureMask, out: &mut [f64]) -> Result<()> {
    debug_assert_eq!(out.len(), mask.row_len());
    let mut pos = 0;
    for (block, on) in BLOCKS.iter().zip(mask.blocks) {
        if on {
            let src = block_values(info, day, *block)?;
            out[pos..pos + HOURS]
                .iter_mut()
                .zip(src.iter())
                .for_each(|(o, &v)| *o = v);
            pos += HOURS;
        }
    }
    if mask.weekday {
        out[pos] = f64::from(weekday_encoding(info.date(day)?).1);
    }
    Ok(())
}

pub fn build_dnn_row(info: &InformationSet<'_>, day: usize, mask: &FeatureMask) -> Result<DnnRow> {
    mask.validate()?;
    let mut values = vec![0.0; mask.row_len()];
    fill_dnn_row(info, day, mask, &mut values)?;
    Ok(DnnRow { values, mask: *mask })
}

/// DNN inputs and 24-hour targets for a set of days.
pub fn build_dnn_design(
    info: &InformationSet<'_>,
    days: &[usize],
    mask: &FeatureMask,
) -> Result<(Array2<f64>, Array2<f64>)> {
    mask.validate()?;
    let mut x = Array2::zeros((days.len(), mask.row_len()));
    let mut y = Array2::zeros((days.len(), HOURS));
    for (r, &day) in days.iter().enumerate() {
        let mut row = x.row_mut(r);
        fill_dnn_row(info, day, mask, row.as_slice_mut().expect("standard layout"))?;
        y.row_mut(r).assign(&info.prices(day)?);
    }
    Ok((x, y))
}

/// Convenience: the DNN row as an owned array.
pub fn dnn_input(info: &InformationSet<'_>, day: usize, mask: &FeatureMask) -> Result<Array1<f64>> {
    Ok(Array1::from(build_dnn_row(info, day, mask)?.values))
}
