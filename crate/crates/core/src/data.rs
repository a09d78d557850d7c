//! Load panels: CSV ingestion, min-max normalization and train/test splits.
//!
//! A [`LoadPanel`] is a time-ordered `N x d` matrix (rows are samples, columns
//! are stations) with a constant sampling interval. Panels are immutable once
//! built; every transformation returns a new panel.

use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::artifact::format_f64;
use crate::error::{Error, Result};

/// Tolerance on consecutive timestamp differences, in seconds.
pub const SPACING_TOLERANCE_SECONDS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LoadPanel {
    values: Mat<f64>,
    sample_interval: f64,
    station_ids: Vec<String>,
    start_timestamp: f64,
}

impl LoadPanel {
    pub fn new(
        values: Mat<f64>,
        sample_interval: f64,
        station_ids: Vec<String>,
        start_timestamp: f64,
    ) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                found: values.nrows(),
            });
        }
        if values.ncols() == 0 {
            return Err(Error::Format("panel has no stations".into()));
        }
        if station_ids.len() != values.ncols() {
            return Err(Error::Format(format!(
                "{} station ids for {} columns",
                station_ids.len(),
                values.ncols()
            )));
        }
        let mut sorted = station_ids.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Format(format!("duplicate station id {:?}", w[0])));
        }
        if !(sample_interval.is_finite() && sample_interval > 0.0) {
            return Err(Error::Format(format!(
                "sample interval must be positive, got {sample_interval}"
            )));
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, j)].is_finite() {
                    return Err(Error::Parse {
                        row: i + 1,
                        column: j + 2,
                        value: values[(i, j)].to_string(),
                    });
                }
            }
        }
        Ok(Self {
            values,
            sample_interval,
            station_ids,
            start_timestamp,
        })
    }

    /// Builds a panel from a closure over (time, station).
    pub fn from_fn(
        n_samples: usize,
        station_ids: Vec<String>,
        sample_interval: f64,
        start_timestamp: f64,
        f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let d = station_ids.len();
        Self::new(
            Mat::from_fn(n_samples, d, f),
            sample_interval,
            station_ids,
            start_timestamp,
        )
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_stations(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> MatRef<'_, f64> {
        self.values.as_ref()
    }

    pub fn value(&self, t: usize, station: usize) -> f64 {
        self.values[(t, station)]
    }

    /// Sampling interval in seconds.
    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    pub fn station_ids(&self) -> &[String] {
        &self.station_ids
    }

    pub fn start_timestamp(&self) -> f64 {
        self.start_timestamp
    }

    pub fn timestamp(&self, t: usize) -> f64 {
        self.start_timestamp + t as f64 * self.sample_interval
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        (0..self.n_stations()).map(|j| self.values[(t, j)]).collect()
    }

    pub fn column(&self, station: usize) -> Vec<f64> {
        (0..self.n_samples())
            .map(|i| self.values[(i, station)])
            .collect()
    }

    /// Sub-panel over a half-open row range.
    pub fn rows(&self, range: Range<usize>) -> Result<LoadPanel> {
        if range.start >= range.end || range.end > self.n_samples() {
            return Err(Error::Range(format!(
                "rows {}..{} outside panel of {} samples",
                range.start,
                range.end,
                self.n_samples()
            )));
        }
        let values = Mat::from_fn(range.len(), self.n_stations(), |i, j| {
            self.values[(range.start + i, j)]
        });
        LoadPanel::new(
            values,
            self.sample_interval,
            self.station_ids.clone(),
            self.timestamp(range.start),
        )
    }

    /// Sub-panel over the given station columns, in the given order.
    pub fn select_stations(&self, columns: &[usize]) -> Result<LoadPanel> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_stations()) {
            return Err(Error::Range(format!(
                "station column {bad} outside panel of {} stations",
                self.n_stations()
            )));
        }
        let values = Mat::from_fn(self.n_samples(), columns.len(), |i, j| {
            self.values[(i, columns[j])]
        });
        let ids = columns
            .iter()
            .map(|&c| self.station_ids[c].clone())
            .collect();
        LoadPanel::new(values, self.sample_interval, ids, self.start_timestamp)
    }

    /// Same timing and stations, new values.
    pub fn with_values(&self, values: Mat<f64>) -> Result<LoadPanel> {
        LoadPanel::new(
            values,
            self.sample_interval,
            self.station_ids.clone(),
            self.start_timestamp,
        )
    }
}

/// Column mapping used when reading a CSV panel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    /// Header name of the timestamp column; it must be the first column.
    pub timestamp_column: String,
    /// Stations to keep, in output order. `None` keeps every column.
    pub stations: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp_column: "timestamp".into(),
            stations: None,
        }
    }
}

/// Parses an epoch-seconds number or an ISO-8601 timestamp (naive times are UTC).
pub fn parse_timestamp(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(epoch(dt.timestamp(), dt.timestamp_subsec_nanos()));
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            let utc = dt.and_utc();
            return Some(epoch(utc.timestamp(), utc.timestamp_subsec_nanos()));
        }
    }
    None
}

fn epoch(secs: i64, nanos: u32) -> f64 {
    secs as f64 + nanos as f64 * 1e-9
}

/// Reads a panel from CSV with header `timestamp,<station>,...`.
///
/// Rows and columns in errors are 1-based; rows count data lines (header
/// excluded) and columns count CSV fields (the timestamp is column 1).
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LoadPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv(reader: impl std::io::Read, schema: &CsvSchema) -> Result<LoadPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.first().map(String::as_str) != Some(schema.timestamp_column.as_str()) {
        return Err(Error::Format(format!(
            "first column must be {:?}, found {:?}",
            schema.timestamp_column,
            header.first()
        )));
    }
    let all_stations = &header[1..];
    let selected: Vec<usize> = match &schema.stations {
        None => (0..all_stations.len()).collect(),
        Some(names) => names
            .iter()
            .map(|name| {
                all_stations
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Format(format!("station {name:?} not in header")))
            })
            .collect::<Result<_>>()?,
    };
    if selected.is_empty() {
        return Err(Error::Format("no station columns".into()));
    }

    let mut stamps = Vec::new();
    let mut data = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != header.len() {
            return Err(Error::Format(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        let stamp = parse_timestamp(&record[0]).ok_or_else(|| Error::Parse {
            row,
            column: 1,
            value: record[0].to_owned(),
        })?;
        stamps.push(stamp);
        for &c in &selected {
            let cell = &record[c + 1];
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: c + 2,
                    value: cell.to_owned(),
                })?;
            data.push(v);
        }
    }
    if stamps.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: stamps.len(),
        });
    }
    let tau = stamps[1] - stamps[0];
    if tau <= 0.0 {
        return Err(Error::Spacing {
            row: 2,
            expected: tau,
            found: tau,
        });
    }
    for (i, w) in stamps.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - tau).abs() > SPACING_TOLERANCE_SECONDS {
            return Err(Error::Spacing {
                row: i + 2,
                expected: tau,
                found: step,
            });
        }
    }
    let d = selected.len();
    let values = Mat::from_fn(stamps.len(), d, |i, j| data[i * d + j]);
    let ids = selected.iter().map(|&c| all_stations[c].clone()).collect();
    LoadPanel::new(values, tau, ids, stamps[0])
}

/// Writes a panel in the same layout [`load_csv`] reads.
pub fn write_csv(panel: &LoadPanel, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_owned()];
    header.extend(panel.station_ids().iter().cloned());
    w.write_record(&header)?;
    for t in 0..panel.n_samples() {
        let mut rec = vec![format_timestamp(panel.timestamp(t))];
        rec.extend((0..panel.n_stations()).map(|j| format_f64(panel.value(t, j))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(panel: &LoadPanel, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(panel, std::io::BufWriter::new(file))
}

/// Epoch seconds, without a fractional part when integral.
pub fn format_timestamp(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format_f64(t)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// Min and max per station column.
    #[default]
    PerStation,
    /// One min and max over the whole panel.
    Global,
}

/// Min-max statistics, one entry per station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn fit(panel: &LoadPanel, scope: NormScope) -> Self {
        let d = panel.n_stations();
        let (mut min, mut max) = (vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
        for j in 0..d {
            for i in 0..panel.n_samples() {
                let v = panel.value(i, j);
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if scope == NormScope::Global {
            let lo = min.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            min.fill(lo);
            max.fill(hi);
        }
        Self { min, max }
    }

    pub fn is_constant(&self, station: usize) -> bool {
        self.max[station] == self.min[station]
    }

    pub fn constant_stations(&self) -> Vec<usize> {
        (0..self.min.len()).filter(|&j| self.is_constant(j)).collect()
    }

    fn check_width(&self, panel: &LoadPanel) -> Result<()> {
        if panel.n_stations() != self.min.len() {
            return Err(Error::Alignment(format!(
                "statistics for {} stations applied to a panel of {}",
                self.min.len(),
                panel.n_stations()
            )));
        }
        Ok(())
    }

    /// `(x - min) / (max - min)`; constant stations map to zero.
    pub fn normalize(&self, panel: &LoadPanel) -> Result<LoadPanel> {
        self.check_width(panel)?;
        let values = Mat::from_fn(panel.n_samples(), panel.n_stations(), |i, j| {
            self.normalize_value(j, panel.value(i, j))
        });
        panel.with_values(values)
    }

    pub fn denormalize(&self, panel: &LoadPanel) -> Result<LoadPanel> {
        self.check_width(panel)?;
        let values = Mat::from_fn(panel.n_samples(), panel.n_stations(), |i, j| {
            self.denormalize_value(j, panel.value(i, j))
        });
        panel.with_values(values)
    }

    pub fn normalize_value(&self, station: usize, x: f64) -> f64 {
        if self.is_constant(station) {
            0.0
        } else {
            (x - self.min[station]) / (self.max[station] - self.min[station])
        }
    }

    pub fn denormalize_value(&self, station: usize, x: f64) -> f64 {
        self.min[station] + x * (self.max[station] - self.min[station])
    }
}

/// Per-station min-max normalization.
pub fn minmax_normalize(panel: &LoadPanel) -> (LoadPanel, NormStats) {
    minmax_normalize_with(panel, NormScope::PerStation)
}

pub fn minmax_normalize_with(panel: &LoadPanel, scope: NormScope) -> (LoadPanel, NormStats) {
    let stats = NormStats::fit(panel, scope);
    let normalized = stats
        .normalize(panel)
        .expect("statistics fitted on this panel");
    (normalized, stats)
}

/// Train and test windows as half-open sample-index ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    pub fn new(train: Range<usize>, test: Range<usize>) -> Self {
        Self { train, test }
    }

    pub fn validate(&self, n_samples: usize) -> Result<()> {
        let (tr, te) = (&self.train, &self.test);
        if tr.start >= tr.end || te.start >= te.end {
            return Err(Error::Range(format!("empty range in {tr:?} / {te:?}")));
        }
        if tr.end > n_samples || te.end > n_samples {
            return Err(Error::Range(format!(
                "ranges {tr:?} / {te:?} exceed panel of {n_samples} samples"
            )));
        }
        if te.start < tr.end {
            return Err(Error::Range(format!(
                "test range {te:?} must start after train range {tr:?} ends"
            )));
        }
        Ok(())
    }
}

/// Normalized train and test panels sharing training-window statistics.
#[derive(Clone, Debug)]
pub struct SplitPanels {
    pub train: LoadPanel,
    pub test: LoadPanel,
    pub stats: NormStats,
}

pub fn split(panel: &LoadPanel, spec: &SplitSpec) -> Result<SplitPanels> {
    split_with(panel, spec, NormScope::PerStation)
}

pub fn split_with(panel: &LoadPanel, spec: &SplitSpec, scope: NormScope) -> Result<SplitPanels> {
    spec.validate(panel.n_samples())?;
    let train_raw = panel.rows(spec.train.clone())?;
    let test_raw = panel.rows(spec.test.clone())?;
    let stats = NormStats::fit(&train_raw, scope);
    Ok(SplitPanels {
        train: stats.normalize(&train_raw)?,
        test: stats.normalize(&test_raw)?,
        stats,
    })
}
