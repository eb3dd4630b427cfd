//! Raw time features and event labels.
//!
//! Converts timestamps of a regularly spaced series into the raw features
//! the basis builders consume (time of day, day of week, fraction of
//! year/month/quarter, continuous time) and maps event occurrences onto
//! timestamps.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Sampling frequency of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Hourly,
    Daily,
    Weekly,
}

impl Frequency {
    pub fn period_seconds(&self) -> i64 {
        match self {
            Frequency::Hourly => 3_600,
            Frequency::Daily => 86_400,
            Frequency::Weekly => 7 * 86_400,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hourly" => Ok(Frequency::Hourly),
            "daily" => Ok(Frequency::Daily),
            "weekly" => Ok(Frequency::Weekly),
            other => Err(Error::Config(format!(
                "unknown frequency '{other}' (expected hourly, daily or weekly)"
            ))),
        }
    }
}

/// JSON-safe float sequences: non-finite values (missing observations)
/// map to null and back, since JSON has no NaN literal.
pub(crate) mod floats_with_nulls {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| if x.is_finite() { Some(*x) } else { None }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }

    pub mod nested {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(
            v: &[Vec<f64>],
            s: S,
        ) -> std::result::Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|col| {
                col.iter()
                    .map(|x| if x.is_finite() { Some(*x) } else { None })
                    .collect::<Vec<_>>()
            }))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> std::result::Result<Vec<Vec<f64>>, D::Error> {
            let raw: Vec<Vec<Option<f64>>> = Vec::deserialize(d)?;
            Ok(raw
                .into_iter()
                .map(|col| col.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
                .collect())
        }
    }
}

/// Regularly spaced series of observations. Missing values are NaN;
/// timestamps are naive local time with no DST arithmetic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeries {
    timestamps: Vec<NaiveDateTime>,
    #[serde(with = "floats_with_nulls")]
    values: Vec<f64>,
    frequency: Frequency,
}

impl TimeSeries {
    /// Validates that timestamps are strictly increasing with consecutive
    /// differences equal to the frequency period, and that there are at
    /// least 2 observations.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        values: Vec<f64>,
        frequency: Frequency,
    ) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::Data(format!(
                "timestamp/value length mismatch: {} vs {}",
                timestamps.len(),
                values.len()
            )));
        }
        if timestamps.len() < 2 {
            return Err(Error::Data(
                "a series needs at least 2 observations".to_string(),
            ));
        }
        let period = frequency.period_seconds();
        for (i, w) in timestamps.windows(2).enumerate() {
            let gap = (w[1] - w[0]).num_seconds();
            if gap <= 0 {
                return Err(Error::Data(format!(
                    "timestamps not strictly increasing at row {} ({} then {})",
                    i + 1,
                    w[0],
                    w[1]
                )));
            }
            if gap != period {
                return Err(Error::Data(format!(
                    "gap of {gap}s between rows {} and {} does not match the {period}s period",
                    i,
                    i + 1
                )));
            }
        }
        Ok(Self {
            timestamps,
            values,
            frequency,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn start(&self) -> NaiveDateTime {
        self.timestamps[0]
    }

    pub fn end(&self) -> NaiveDateTime {
        *self.timestamps.last().unwrap()
    }

    /// Timestamps continuing the series for `horizon` further periods.
    pub fn future_timestamps(&self, horizon: usize) -> Vec<NaiveDateTime> {
        let period = Duration::seconds(self.frequency.period_seconds());
        let mut out = Vec::with_capacity(horizon);
        let mut t = self.end();
        for _ in 0..horizon {
            t += period;
            out.push(t);
        }
        out
    }

    /// Contiguous sub-series over `range` (indices).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<TimeSeries> {
        if range.end > self.len() || range.start >= range.end {
            return Err(Error::Data(format!(
                "invalid slice {range:?} for series of length {}",
                self.len()
            )));
        }
        TimeSeries::new(
            self.timestamps[range.clone()].to_vec(),
            self.values[range].to_vec(),
            self.frequency,
        )
    }
}

/// Raw per-timestamp features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFeatureRow {
    /// Hours into the day, [0, 24).
    pub tod: f64,
    /// Day of week, 0-6 with Sunday = 0.
    pub dow: u8,
    /// Days into the week starting Sunday, [0, 7).
    pub tow: f64,
    /// Fraction of the calendar year elapsed, [0, 1).
    pub toy: f64,
    /// Fraction of the calendar month elapsed, [0, 1).
    pub tom: f64,
    /// Fraction of the calendar quarter elapsed, [0, 1).
    pub toq: f64,
    /// Calendar-aware years elapsed since the origin, >= 0.
    pub ct: f64,
}

fn year_start(year: i32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(year, 1, 1)
        .expect("valid year start")
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

fn seconds_in_year(year: i32) -> f64 {
    (year_start(year + 1) - year_start(year)).num_seconds() as f64
}

fn month_start(year: i32, month: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(year, month, 1)
        .expect("valid month start")
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

fn next_month(year: i32, month: u32) -> (i32, u32) {
    if month == 12 {
        (year + 1, 1)
    } else {
        (year, month + 1)
    }
}

/// Fraction of the calendar year elapsed at `ts`, within ts's own year.
fn year_fraction(ts: NaiveDateTime) -> f64 {
    let start = year_start(ts.year());
    (ts - start).num_seconds() as f64 / seconds_in_year(ts.year())
}

/// Calendar-aware years elapsed from `origin` to `ts`: whole calendar years
/// plus the difference of within-year fractions. Each year contributes its
/// own length, so leap years do not distort the scale.
pub fn years_since(origin: NaiveDateTime, ts: NaiveDateTime) -> f64 {
    (ts.year() - origin.year()) as f64 + year_fraction(ts) - year_fraction(origin)
}

/// Raw features for one timestamp relative to `origin`.
pub fn raw_features_at(ts: NaiveDateTime, origin: NaiveDateTime) -> RawFeatureRow {
    let tod = ts.num_seconds_from_midnight() as f64 / 3_600.0;
    let dow = ts.weekday().num_days_from_sunday() as u8;
    let tow = dow as f64 + tod / 24.0;
    let toy = year_fraction(ts);

    let m_start = month_start(ts.year(), ts.month());
    let (ny, nm) = next_month(ts.year(), ts.month());
    let m_len = (month_start(ny, nm) - m_start).num_seconds() as f64;
    let tom = (ts - m_start).num_seconds() as f64 / m_len;

    let q_first_month = ((ts.month() - 1) / 3) * 3 + 1;
    let q_start = month_start(ts.year(), q_first_month);
    let (qy, qm) = if q_first_month == 10 {
        (ts.year() + 1, 1)
    } else {
        (ts.year(), q_first_month + 3)
    };
    let q_len = (month_start(qy, qm) - q_start).num_seconds() as f64;
    let toq = (ts - q_start).num_seconds() as f64 / q_len;

    RawFeatureRow {
        tod,
        dow,
        tow,
        toy,
        tom,
        toq,
        ct: years_since(origin, ts),
    }
}

/// Raw features for a slice of timestamps.
pub fn time_features_at(timestamps: &[NaiveDateTime], origin: NaiveDateTime) -> Vec<RawFeatureRow> {
    timestamps
        .iter()
        .map(|&ts| raw_features_at(ts, origin))
        .collect()
}

/// Raw features for every timestamp of a series. `origin` must not be after
/// the first timestamp.
pub fn compute_time_features(series: &TimeSeries, origin: NaiveDateTime) -> Result<Vec<RawFeatureRow>> {
    if origin > series.start() {
        return Err(Error::Config(format!(
            "origin {origin} is after the first timestamp {}",
            series.start()
        )));
    }
    Ok(time_features_at(series.timestamps(), origin))
}

/// One occurrence of a recurring event, covering `[start, start + length)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOccurrence {
    pub label: String,
    pub start: NaiveDateTime,
    pub length_seconds: i64,
}

/// An occurrence window after expansion; the basis phase runs over
/// `[start, start + length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub label: String,
    pub start: NaiveDateTime,
    pub length_seconds: i64,
}

/// Maps each timestamp to the expanded event windows covering it.
///
/// A timestamp t is covered by an occurrence `[t_i, t_i + l)` expanded by
/// (`expand_before`, `expand_after`) seconds when
/// t in [t_i - expand_before, t_i + l + expand_after). Windows of the same
/// label must not overlap after expansion.
pub fn label_events(
    timestamps: &[NaiveDateTime],
    db: &[EventOccurrence],
    expand_before: i64,
    expand_after: i64,
) -> Result<Vec<Vec<EventWindow>>> {
    for occ in db {
        if occ.length_seconds <= 0 {
            return Err(Error::Data(format!(
                "event '{}' at {} has non-positive length {}",
                occ.label, occ.start, occ.length_seconds
            )));
        }
    }
    // Expanded windows, grouped per label and checked for overlap.
    let mut windows: Vec<EventWindow> = db
        .iter()
        .map(|occ| EventWindow {
            label: occ.label.clone(),
            start: occ.start - Duration::seconds(expand_before),
            length_seconds: occ.length_seconds + expand_before + expand_after,
        })
        .collect();
    windows.sort_by(|a, b| a.label.cmp(&b.label).then(a.start.cmp(&b.start)));
    for pair in windows.windows(2) {
        if pair[0].label == pair[1].label {
            let end0 = pair[0].start + Duration::seconds(pair[0].length_seconds);
            if pair[1].start < end0 {
                return Err(Error::Data(format!(
                    "overlapping occurrences of event '{}' at {} and {} (after expansion)",
                    pair[0].label, pair[0].start, pair[1].start
                )));
            }
        }
    }

    let mut out = vec![Vec::new(); timestamps.len()];
    for w in &windows {
        let end = w.start + Duration::seconds(w.length_seconds);
        // Timestamps are sorted, so find the covered index range.
        let lo = timestamps.partition_point(|&t| t < w.start);
        let hi = timestamps.partition_point(|&t| t < end);
        for row in out.iter_mut().take(hi).skip(lo) {
            row.push(w.clone());
        }
    }
    Ok(out)
}

/// Parses `YYYY-MM-DD` or `YYYY-MM-DDTHH:MM:SS`.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok(dt);
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap());
    }
    Err(Error::Data(format!(
        "cannot parse timestamp '{s}' (expected YYYY-MM-DD or YYYY-MM-DDTHH:MM:SS)"
    )))
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Regressor columns aligned with a series.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegressorTable {
    names: Vec<String>,
    #[serde(with = "floats_with_nulls::nested")]
    columns: Vec<Vec<f64>>,
}

impl RegressorTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: String, values: Vec<f64>) -> Result<()> {
        if self.names.contains(&name) {
            return Err(Error::Data(format!("duplicate regressor column '{name}'")));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn len_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> RegressorTable {
        RegressorTable {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| c[range.clone()].to_vec())
                .collect(),
        }
    }
}

/// Reads a series CSV: header row, `ts` ISO-8601 timestamps, `y` decimal
/// values (empty cell = missing), extra columns become regressors.
pub fn read_series_csv(
    path: &Path,
    ts_column: &str,
    value_column: &str,
    frequency: Frequency,
) -> Result<(TimeSeries, RegressorTable)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad header in {}: {e}", path.display())))?
        .clone();
    let ts_idx = headers
        .iter()
        .position(|h| h == ts_column)
        .ok_or_else(|| Error::Data(format!("column '{ts_column}' not found in header")))?;
    let y_idx = headers
        .iter()
        .position(|h| h == value_column)
        .ok_or_else(|| Error::Data(format!("column '{value_column}' not found in header")))?;
    let extra: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ts_idx && *i != y_idx)
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut extra_cols: Vec<Vec<f64>> = vec![Vec::new(); extra.len()];
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2; // header is line 1
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let ts_raw = record
            .get(ts_idx)
            .ok_or_else(|| Error::Data(format!("line {line}: missing '{ts_column}'")))?;
        timestamps
            .push(parse_timestamp(ts_raw).map_err(|e| Error::Data(format!("line {line}: {e}")))?);
        let y_raw = record.get(y_idx).unwrap_or("");
        values.push(parse_cell(y_raw, value_column, line)?);
        for (slot, (col_idx, name)) in extra_cols.iter_mut().zip(&extra) {
            let raw = record.get(*col_idx).unwrap_or("");
            slot.push(parse_cell(raw, name, line)?);
        }
    }

    let series = TimeSeries::new(timestamps, values, frequency)?;
    let mut regressors = RegressorTable::new();
    for ((_, name), col) in extra.into_iter().zip(extra_cols) {
        regressors.push(name, col)?;
    }
    Ok((series, regressors))
}

fn parse_cell(raw: &str, column: &str, line: usize) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok(f64::NAN);
    }
    trimmed
        .parse::<f64>()
        .map_err(|e| Error::Data(format!("line {line}: bad value '{trimmed}' in '{column}': {e}")))
}

/// Reads an event database CSV with columns `label,start,length_seconds`.
pub fn read_events_csv(path: &Path) -> Result<Vec<EventOccurrence>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad header in {}: {e}", path.display())))?
        .clone();
    let idx = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in event db header")))
    };
    let (li, si, ni) = (idx("label")?, idx("start")?, idx("length_seconds")?);
    let mut out = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2;
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let label = record.get(li).unwrap_or("").to_string();
        let start = parse_timestamp(record.get(si).unwrap_or(""))
            .map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let length_seconds: i64 = record
            .get(ni)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| Error::Data(format!("line {line}: bad length_seconds: {e}")))?;
        out.push(EventOccurrence {
            label,
            start,
            length_seconds,
        });
    }
    Ok(out)
}
