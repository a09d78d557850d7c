//! RMSE of a forecast artifact against a truth panel, on normalized values.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use koopman_core::artifact::{format_f64, write_table};
use koopman_core::data::{load_csv, parse_timestamp};
use koopman_core::forecast::rmse;
use koopman_core::{Error, Result};

use super::{station_mismatch, StatsRecord};
use crate::config::PipelineConfig;
use crate::staging::Staging;

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub stations: Vec<StationScore>,
    pub clusters: Vec<ClusterScore>,
    pub overall: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StationScore {
    pub station: String,
    pub cluster: usize,
    pub samples: usize,
    pub rmse: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterScore {
    pub cluster: usize,
    pub stations: usize,
    pub rmse: f64,
}

struct ForecastRow {
    timestamp: f64,
    station: String,
    cluster: usize,
    predicted: f64,
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn read_forecast(path: &Path) -> Result<Vec<ForecastRow>> {
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(open(path)?));
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: no {name} column", path.display())))
    };
    let cols = [column("timestamp")?, column("station")?, column("cluster")?, column("predicted")?];
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |c: usize| Error::Parse {
            row: row + 1,
            column: c,
            value: record[c].to_string(),
        };
        rows.push(ForecastRow {
            timestamp: parse_timestamp(&record[cols[0]]).ok_or_else(|| bad(cols[0]))?,
            station: record[cols[1]].to_string(),
            cluster: record[cols[2]].parse().map_err(|_| bad(cols[2]))?,
            predicted: record[cols[3]].parse().map_err(|_| bad(cols[3]))?,
        });
    }
    Ok(rows)
}

/// Scores `forecast_dir/forecast.csv` against `truth` using the stored
/// training statistics.
pub fn evaluate(cfg: &PipelineConfig, forecast_dir: &Path, truth: &Path) -> Result<EvaluationReport> {
    let record: StatsRecord = serde_json::from_reader(std::io::BufReader::new(open(
        &forecast_dir.join("norm_stats.json"),
    )?))?;
    let stats = record.stats()?;
    let rows = read_forecast(&forecast_dir.join("forecast.csv"))?;
    let truth = load_csv(truth, &cfg.schema)?;
    if let Some(bad) = station_mismatch(&record.station_ids, truth.station_ids()) {
        return Err(Error::Alignment(format!(
            "truth station columns do not match the forecast: {}",
            bad.join(", ")
        )));
    }
    let station_index: HashMap<&str, usize> = record
        .station_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let time_index: HashMap<u64, usize> = (0..truth.n_samples())
        .map(|t| (truth.timestamp(t).to_bits(), t))
        .collect();

    let mut unknown_stations = Vec::new();
    let mut unknown_times = Vec::new();
    // Per station: cluster, actual and predicted series.
    let mut series: BTreeMap<usize, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in &rows {
        let Some(&s) = station_index.get(row.station.as_str()) else {
            if !unknown_stations.contains(&row.station) {
                unknown_stations.push(row.station.clone());
            }
            continue;
        };
        let Some(&t) = time_index.get(&row.timestamp.to_bits()) else {
            unknown_times.push(row.timestamp);
            continue;
        };
        let entry = series.entry(s).or_insert_with(|| (row.cluster, Vec::new(), Vec::new()));
        if entry.0 != row.cluster {
            return Err(Error::Format(format!("station {} appears in two clusters", row.station)));
        }
        entry.1.push(stats.normalize_value(s, truth.value(t, s)));
        entry.2.push(stats.normalize_value(s, row.predicted));
    }
    if !unknown_stations.is_empty() {
        return Err(Error::Alignment(format!(
            "forecast stations missing from the truth panel: {}",
            unknown_stations.join(", ")
        )));
    }
    if !unknown_times.is_empty() {
        unknown_times.sort_by(f64::total_cmp);
        unknown_times.dedup();
        let shown: Vec<String> = unknown_times.iter().take(5).map(|t| format!("{t}")).collect();
        return Err(Error::Alignment(format!(
            "{} forecast timestamps are not in the truth panel (first: {})",
            unknown_times.len(),
            shown.join(", ")
        )));
    }
    if series.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }

    let mut stations = Vec::new();
    let mut pooled: BTreeMap<usize, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let (mut all_actual, mut all_predicted) = (Vec::new(), Vec::new());
    for (s, (cluster, actual, predicted)) in &series {
        stations.push(StationScore {
            station: record.station_ids[*s].clone(),
            cluster: *cluster,
            samples: actual.len(),
            rmse: rmse(actual, predicted)?,
        });
        let c = pooled.entry(*cluster).or_default();
        c.0 += 1;
        c.1.extend_from_slice(actual);
        c.2.extend_from_slice(predicted);
        all_actual.extend_from_slice(actual);
        all_predicted.extend_from_slice(predicted);
    }
    let clusters = pooled
        .iter()
        .map(|(&cluster, (n, a, p))| {
            Ok(ClusterScore {
                cluster,
                stations: *n,
                rmse: rmse(a, p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        stations,
        clusters,
        overall: rmse(&all_actual, &all_predicted)?,
    })
}

pub fn run(cfg: &PipelineConfig, forecast_dir: &Path, truth: &Path, out: &Path, force: bool) -> Result<()> {
    let report = evaluate(cfg, forecast_dir, truth)?;
    let mut staging = Staging::new(out, force)?;
    staging.write_json("rmse.json", &report)?;
    staging.write_with("rmse.csv", |w| {
        let rows = report
            .stations
            .iter()
            .map(|s| vec!["station".into(), s.station.clone(), format_f64(s.rmse)])
            .chain(
                report
                    .clusters
                    .iter()
                    .map(|c| vec!["cluster".into(), c.cluster.to_string(), format_f64(c.rmse)]),
            )
            .chain(std::iter::once(vec!["overall".into(), "all".into(), format_f64(report.overall)]));
        write_table(w, &["scope", "id", "rmse"], rows)
    })?;
    #[derive(Serialize)]
    struct Inputs<'a> {
        forecast: &'a Path,
        truth: &'a Path,
        schema: &'a koopman_core::data::CsvSchema,
    }
    let inputs = Inputs {
        forecast: forecast_dir,
        truth,
        schema: &cfg.schema,
    };
    let summary = serde_json::json!({ "overall_rmse": report.overall });
    staging.commit("evaluate", inputs, summary, Vec::new())?;
    Ok(())
}
