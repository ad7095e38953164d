//! Day × hour price matrices and their CSV representation.
//!
//! The CSV layout is `date,h1,...,h24` with ISO dates and plain decimal
//! numbers. Values are written with the shortest representation that parses
//! back to the same `f64`, so files round-trip exactly.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use ndarray::{s, Array2, ArrayView1, ArrayView2};

use crate::data::{MarketDataset, TestPeriod};
use crate::{EpfError, Result, HOURS};

/// Day-ahead prices (forecast or realised) indexed by date.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastMatrix {
    dates: Vec<NaiveDate>,
    values: Array2<f64>,
}

impl ForecastMatrix {
    pub fn new(dates: Vec<NaiveDate>, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (dates.len(), HOURS) {
            return Err(EpfError::Shape(format!(
                "forecast values are {:?}, expected ({}, {HOURS})",
                values.dim(),
                dates.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EpfError::Shape("forecast dates must be unique and sorted".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EpfError::Numeric("forecast contains non-finite values".into()));
        }
        Ok(Self { dates, values })
    }

    pub fn empty() -> Self {
        Self {
            dates: Vec::new(),
            values: Array2::zeros((0, HOURS)),
        }
    }

    /// Realised prices of a dataset as a matrix.
    pub fn actuals(dataset: &MarketDataset) -> Self {
        Self {
            dates: dataset.dates().to_vec(),
            values: dataset.prices().to_owned(),
        }
    }

    /// Realised prices over a test period.
    pub fn actuals_for(dataset: &MarketDataset, period: &TestPeriod) -> Self {
        let r = period.indices();
        Self {
            dates: dataset.dates()[r.clone()].to_vec(),
            values: dataset.prices().slice(s![r, ..]).to_owned(),
        }
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_parts(self) -> (Vec<NaiveDate>, Array2<f64>) {
        (self.dates, self.values)
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn row_for(&self, date: NaiveDate) -> Option<ArrayView1<'_, f64>> {
        self.position(date).map(|i| self.values.row(i))
    }

    pub fn position(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Whether the dates form an unbroken run of calendar days.
    pub fn is_consecutive(&self) -> bool {
        self.dates.windows(2).all(|w| w[1] == w[0] + Duration::days(1))
    }

    /// Rows for `dates`, in that order; every date must be present.
    pub fn select(&self, dates: &[NaiveDate]) -> Result<ForecastMatrix> {
        let index: HashMap<NaiveDate, usize> = self.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let mut values = Array2::zeros((dates.len(), HOURS));
        for (r, d) in dates.iter().enumerate() {
            let i = *index
                .get(d)
                .ok_or_else(|| EpfError::Shape(format!("no row for {d}")))?;
            values.row_mut(r).assign(&self.values.row(i));
        }
        ForecastMatrix::new(dates.to_vec(), values)
    }

    pub fn push(&mut self, date: NaiveDate, values: &[f64; HOURS]) -> Result<()> {
        if let Some(&last) = self.dates.last() {
            if date <= last {
                return Err(EpfError::Shape(format!("{date} does not follow {last}")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EpfError::Numeric(format!("non-finite forecast for {date}")));
        }
        self.values.push_row(ArrayView1::from(&values[..])).expect("24 columns");
        self.dates.push(date);
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| EpfError::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_header(&mut w).map_err(|e| EpfError::io(path, e))?;
        for (i, d) in self.dates.iter().enumerate() {
            write_row(&mut w, *d, self.values.row(i)).map_err(|e| EpfError::io(path, e))?;
        }
        w.flush().map_err(|e| EpfError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| EpfError::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| EpfError::Parse { line: 1, message: e.to_string() })?
            .clone();
        if header.len() != HOURS + 1 {
            return Err(EpfError::Schema(format!(
                "forecast file needs {} columns (date,h1..h24), found {}",
                HOURS + 1,
                header.len()
            )));
        }
        let mut out = ForecastMatrix::empty();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| EpfError::Parse { line, message: e.to_string() })?;
            let date = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d").map_err(|e| EpfError::Parse {
                line,
                message: format!("invalid date '{}': {e}", &rec[0]),
            })?;
            let mut row = [0.0; HOURS];
            for (h, v) in row.iter_mut().enumerate() {
                *v = rec[h + 1].trim().parse().map_err(|_| EpfError::Parse {
                    line,
                    message: format!("invalid value '{}'", &rec[h + 1]),
                })?;
            }
            out.push(date, &row).map_err(|e| EpfError::Parse { line, message: e.to_string() })?;
        }
        Ok(out)
    }

    /// Row range `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> ForecastMatrix {
        ForecastMatrix {
            dates: self.dates[start..end].to_vec(),
            values: self.values.slice(s![start..end, ..]).to_owned(),
        }
    }
}

fn write_header(w: &mut impl Write) -> std::io::Result<()> {
    write!(w, "date")?;
    for h in 1..=HOURS {
        write!(w, ",h{h}")?;
    }
    writeln!(w)
}

fn write_row(w: &mut impl Write, date: NaiveDate, values: ArrayView1<'_, f64>) -> std::io::Result<()> {
    write!(w, "{}", date.format("%Y-%m-%d"))?;
    for v in values {
        write!(w, ",{v}")?;
    }
    writeln!(w)
}

/// Append-only writer for forecast files, used while a backtest runs.
pub struct ForecastAppender {
    writer: BufWriter<File>,
    path: std::path::PathBuf,
}

impl ForecastAppender {
    /// Opens `path` for appending, writing the header if the file is new or empty.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let fresh = std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| EpfError::io(&path, e))?;
        let mut writer = BufWriter::new(file);
        if fresh {
            write_header(&mut writer).map_err(|e| EpfError::io(&path, e))?;
        }
        Ok(Self { writer, path })
    }

    pub fn append(&mut self, date: NaiveDate, values: &[f64; HOURS]) -> Result<()> {
        write_row(&mut self.writer, date, ArrayView1::from(&values[..])).map_err(|e| EpfError::io(&self.path, e))?;
        self.writer.flush().map_err(|e| EpfError::io(&self.path, e))
    }
}
