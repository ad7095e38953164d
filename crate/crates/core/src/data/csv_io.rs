use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Timelike};
use ndarray::Array2;

use super::MarketDataset;
use crate::{EpfError, Result, HOURS};

/// Position of the daylight-saving transition hour in local time (02:00).
pub const DEFAULT_DST_SLOT: usize = 2;

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
];

/// Maps a 23-, 24- or 25-value local-time day onto 24 hourly slots.
///
/// `dst_slot` is the hour affected by the clock change: on a 25-hour day the
/// values at `dst_slot` and `dst_slot + 1` are the two readings of the repeated
/// hour and are averaged; on a 23-hour day `dst_slot` is the missing hour and
/// is filled by linear interpolation of its neighbours.
pub fn normalize_calendar(raw_day: &[f64], dst_slot: usize) -> Result<[f64; HOURS]> {
    let mut out = [0.0; HOURS];
    match raw_day.len() {
        24 => out.copy_from_slice(raw_day),
        25 => {
            if dst_slot >= 24 {
                return Err(EpfError::Cadence(format!(
                    "repeated hour slot {dst_slot} out of range"
                )));
            }
            out[..dst_slot].copy_from_slice(&raw_day[..dst_slot]);
            out[dst_slot] = 0.5 * (raw_day[dst_slot] + raw_day[dst_slot + 1]);
            out[dst_slot + 1..].copy_from_slice(&raw_day[dst_slot + 2..]);
        }
        23 => {
            if dst_slot >= 24 {
                return Err(EpfError::Cadence(format!(
                    "missing hour slot {dst_slot} out of range"
                )));
            }
            let filled = match (dst_slot.checked_sub(1), raw_day.get(dst_slot)) {
                (Some(prev), Some(&next)) => 0.5 * (raw_day[prev] + next),
                (None, Some(&next)) => next,
                (Some(prev), None) => raw_day[prev],
                (None, None) => unreachable!("23 values always have a neighbour"),
            };
            out[..dst_slot].copy_from_slice(&raw_day[..dst_slot]);
            out[dst_slot] = filled;
            out[dst_slot + 1..].copy_from_slice(&raw_day[dst_slot..]);
        }
        n => return Err(EpfError::Calendar(n)),
    }
    Ok(out)
}

/// Reads a dataset file with columns `timestamp,price,exog1,exog2`.
///
/// The market id is taken from the file stem (`NP.csv` → `NP`).
pub fn parse_dataset_csv(path: impl AsRef<Path>) -> Result<MarketDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| EpfError::io(path, e))?;
    let market = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("UNKNOWN")
        .to_string();
    parse_dataset_reader(file, market)
}

struct RawDay {
    date: NaiveDate,
    hours: Vec<u32>,
    values: [Vec<f64>; 3],
    first_line: usize,
}

impl RawDay {
    fn new(date: NaiveDate, line: usize) -> Self {
        Self {
            date,
            hours: Vec::with_capacity(25),
            values: [Vec::with_capacity(25), Vec::with_capacity(25), Vec::with_capacity(25)],
            first_line: line,
        }
    }

    /// Slot of the daylight-saving irregularity, validating hourly cadence.
    fn dst_slot(&self) -> Result<usize> {
        let cadence = |msg: String| EpfError::Cadence(format!("{} (line {}): {msg}", self.date, self.first_line));
        let mut slot = None;
        let mut expected = 0u32;
        let mut i = 0;
        while i < self.hours.len() {
            let h = self.hours[i];
            if h == expected {
                expected += 1;
                i += 1;
            } else if h + 1 == expected && self.hours.len() == 25 && slot.is_none() {
                // repeated hour on a fall-back day
                slot = Some(i - 1);
                i += 1;
            } else if h == expected + 1 && self.hours.len() == 23 && slot.is_none() {
                slot = Some(expected as usize);
                expected += 1;
            } else {
                return Err(cadence(format!("unexpected hour {h}, expected {expected}")));
            }
        }
        let complete = match self.hours.len() {
            24 => expected == 24,
            23 => expected == 24 || (expected == 23 && slot.is_none()),
            25 => expected == 24 && slot.is_some(),
            n => return Err(EpfError::Calendar(n)),
        };
        if !complete {
            return Err(cadence(format!("{} hourly rows do not cover the day", self.hours.len())));
        }
        // A 23-row day whose missing hour is the last one.
        Ok(slot.unwrap_or(if self.hours.len() == 23 { 23 } else { DEFAULT_DST_SLOT }))
    }
}

fn parse_timestamp(raw: &str, line: usize) -> Result<NaiveDateTime> {
    let raw = raw.trim();
    for fmt in TIMESTAMP_FORMATS {
        if let Ok(ts) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(ts);
        }
    }
    if let Ok(ts) = DateTime::parse_from_rfc3339(raw) {
        return Ok(ts.naive_local());
    }
    if let Ok(ts) = DateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S%:z") {
        return Ok(ts.naive_local());
    }
    Err(EpfError::Parse {
        line,
        message: format!("invalid timestamp '{raw}'"),
    })
}

fn parse_value(raw: &str, line: usize, column: &str) -> Result<f64> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(EpfError::Parse {
            line,
            message: format!("missing {column} value"),
        });
    }
    let v: f64 = raw.parse().map_err(|_| EpfError::Parse {
        line,
        message: format!("invalid {column} value '{raw}'"),
    })?;
    if !v.is_finite() {
        return Err(EpfError::Parse {
            line,
            message: format!("non-finite {column} value '{raw}'"),
        });
    }
    Ok(v)
}

/// Parses dataset CSV content from any reader.
pub fn parse_dataset_reader(reader: impl Read, market_id: impl Into<String>) -> Result<MarketDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| EpfError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() < 4 {
        return Err(EpfError::Schema(format!(
            "expected columns timestamp,price,exog1,exog2 but header has {} column(s): {:?}",
            header.len(),
            header.iter().collect::<Vec<_>>()
        )));
    }

    let mut days: Vec<RawDay> = Vec::new();
    let mut prev_ts: Option<NaiveDateTime> = None;
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| EpfError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(EpfError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let ts = parse_timestamp(&record[0], line)?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(EpfError::Cadence(format!(
                "line {line}: timestamp {ts} is not on the hour"
            )));
        }
        if let Some(prev) = prev_ts {
            if ts < prev {
                return Err(EpfError::Cadence(format!(
                    "line {line}: timestamp {ts} precedes {prev}"
                )));
            }
        }
        prev_ts = Some(ts);
        let values = [
            parse_value(&record[1], line, "price")?,
            parse_value(&record[2], line, "exog1")?,
            parse_value(&record[3], line, "exog2")?,
        ];
        let date = ts.date();
        if days.last().map(|d| d.date) != Some(date) {
            if let Some(last) = days.last() {
                if last.date.succ_opt() != Some(date) {
                    return Err(EpfError::Cadence(format!(
                        "line {line}: gap between {} and {date}",
                        last.date
                    )));
                }
            }
            days.push(RawDay::new(date, line));
        }
        let day = days.last_mut().expect("day pushed above");
        if day.hours.len() >= 25 {
            return Err(EpfError::Cadence(format!(
                "line {line}: more than 25 hourly rows on {date}"
            )));
        }
        day.hours.push(ts.hour());
        for (series, v) in day.values.iter_mut().zip(values) {
            series.push(v);
        }
    }
    if days.is_empty() {
        return Err(EpfError::Schema("dataset has no data rows".into()));
    }

    let n = days.len();
    let mut mats = [
        Array2::zeros((n, HOURS)),
        Array2::zeros((n, HOURS)),
        Array2::zeros((n, HOURS)),
    ];
    let mut dates = Vec::with_capacity(n);
    for (row, day) in days.iter().enumerate() {
        if !(23..=25).contains(&day.hours.len()) {
            return Err(EpfError::Cadence(format!(
                "{} (line {}): {} hourly rows, expected 23, 24 or 25",
                day.date,
                day.first_line,
                day.hours.len()
            )));
        }
        let slot = day.dst_slot()?;
        for (mat, raw) in mats.iter_mut().zip(&day.values) {
            let normalized = normalize_calendar(raw, slot)?;
            mat.row_mut(row)
                .iter_mut()
                .zip(normalized)
                .for_each(|(dst, v)| *dst = v);
        }
        dates.push(day.date);
    }
    let [prices, exog1, exog2] = mats;
    MarketDataset::new(market_id, dates, prices, exog1, exog2)
}

/// Writes `dataset` as `timestamp,price,exog1,exog2`, 24 rows per day.
///
/// Values use the shortest representation that parses back exactly, so
/// [`parse_dataset_csv`] recovers the same dataset.
pub fn write_dataset_csv(dataset: &MarketDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| EpfError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| EpfError::io(path, e);
    writeln!(out, "timestamp,price,exog1,exog2").map_err(io)?;
    let (p, e1, e2) = (dataset.prices(), dataset.exog1(), dataset.exog2());
    for (d, date) in dataset.dates().iter().enumerate() {
        for h in 0..HOURS {
            writeln!(
                out,
                "{} {h:02}:00:00,{},{},{}",
                date.format("%Y-%m-%d"),
                p[[d, h]],
                e1[[d, h]],
                e2[[d, h]]
            )
            .map_err(io)?;
        }
    }
    out.flush().map_err(io)
}
