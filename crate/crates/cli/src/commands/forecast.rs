//! One Koopman forecasting model per station cluster.

use std::collections::HashMap;
use std::path::Path;

use faer::Mat;
use serde::Serialize;

use koopman_core::artifact::{format_f64, write_table};
use koopman_core::data::{format_timestamp, load_csv, split_with, SplitSpec};
use koopman_core::forecast::{block_diagonality, noise_split, rmse};
use koopman_core::phate::phate;
use koopman_core::pipeline::KoopmanForecaster;
use koopman_core::{Error, Result};

use super::cluster::write_embedding;
use super::StatsRecord;
use crate::config::{Clustering, PipelineConfig};
use crate::staging::Staging;

#[derive(Debug, Serialize)]
pub struct ForecastSummary {
    pub train: SplitSpec,
    pub horizon: usize,
    pub models: Vec<ModelRecord>,
    pub overall_rmse: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ModelRecord {
    pub cluster: usize,
    pub stations: Vec<String>,
    pub modes: usize,
    pub state_width: usize,
    pub off_block_fraction: f64,
    pub rmse: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvolutionRecord {
    cluster: usize,
    stations: Vec<String>,
    frequencies_hz: Vec<f64>,
    evolution: Vec<Vec<f64>>,
    off_block_fraction: f64,
    skew_deviation: Vec<f64>,
}

/// Normalized predictions of one station.
struct StationForecast {
    cluster: usize,
    predicted: Vec<f64>,
}

/// Noise components of one cluster, one row per observed step.
struct ClusterNoise {
    members: Vec<usize>,
    modal: Mat<f64>,
    innovation: Mat<f64>,
}

fn default_split(n: usize, horizon: usize) -> Result<SplitSpec> {
    if n <= horizon {
        return Err(Error::InsufficientData {
            needed: horizon + 1,
            found: n,
        });
    }
    Ok(SplitSpec::new(0..n - horizon, n - horizon..n))
}

/// Cluster labels by station from a `phate.csv` artifact.
pub fn read_labels(path: &Path, stations: &[String]) -> Result<Vec<usize>> {
    let file = std::fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: no {name} column", path.display())))
    };
    let (id_col, label_col) = (column("station_id")?, column("cluster")?);
    let mut by_id = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let raw = &record[label_col];
        let label: usize = raw.parse().map_err(|_| Error::Parse {
            row: row + 1,
            column: label_col,
            value: raw.to_string(),
        })?;
        by_id.insert(record[id_col].to_string(), label);
    }
    let mut missing: Vec<&str> = stations
        .iter()
        .filter(|s| !by_id.contains_key(*s))
        .map(String::as_str)
        .collect();
    let mut extra: Vec<&str> = by_id
        .keys()
        .filter(|k| !stations.contains(k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        extra.sort_unstable();
        missing.append(&mut extra);
        return Err(Error::Alignment(format!(
            "cluster labels and panel disagree on stations: {}",
            missing.join(", ")
        )));
    }
    Ok(stations.iter().map(|s| by_id[s]).collect())
}

pub fn run(cfg: &PipelineConfig, out: &Path, force: bool) -> Result<()> {
    cfg.validate_forecast()?;
    let f = &cfg.forecast;
    let horizon = f.horizon;
    if let Clustering::File(path) = &f.clustering {
        if !path.exists() {
            return Err(Error::File {
                path: path.clone(),
                source: std::io::Error::from(std::io::ErrorKind::NotFound),
            });
        }
    }
    let panel = load_csv(cfg.input()?, &cfg.schema)?;
    let spec = match &f.split {
        Some(spec) => spec.clone(),
        None => default_split(panel.n_samples(), horizon)?,
    };
    if spec.test.start != spec.train.end {
        return Err(Error::Config("the test window must start where the training window ends".into()));
    }
    let parts = split_with(&panel, &spec, cfg.normalization)?;
    cfg.koopman.validate(parts.train.n_samples())?;
    let mut staging = Staging::new(out, force)?;

    let d = panel.n_stations();
    let labels = match &f.clustering {
        Clustering::Single => vec![0; d],
        Clustering::Phate => {
            let embedding = phate(&panel.rows(spec.train.clone())?, &cfg.phate)?;
            write_embedding(&mut staging, &embedding)?;
            embedding.labels
        }
        Clustering::File(path) => read_labels(path, panel.station_ids())?,
    };
    let n_clusters = labels.iter().max().map_or(0, |&m| m + 1);

    let observed = parts.test.n_samples().min(horizon);
    let mut warnings = Vec::new();
    let mut models = Vec::new();
    let mut evolutions = Vec::new();
    let mut noise = Vec::new();
    let mut stations: Vec<Option<StationForecast>> = (0..d).map(|_| None).collect();
    for c in 0..n_clusters {
        let members: Vec<usize> = (0..d).filter(|&s| labels[s] == c).collect();
        if members.is_empty() {
            warnings.push(format!("cluster {c} has no stations; no model fitted"));
            continue;
        }
        let train = parts.train.select_stations(&members)?;
        let test = parts.test.select_stations(&members)?;
        let fitted = KoopmanForecaster::fit(&train, &cfg.koopman, f.mode)?;
        let forecast = match f.reanchor_interval {
            Some(interval) => fitted.forecast_reanchored(&test, horizon, interval)?,
            None => fitted.forecast(horizon)?,
        };
        let diagnostics = block_diagonality(fitted.model.evolution(), fitted.model.layout())?;
        let ids: Vec<String> = members.iter().map(|&s| panel.station_ids()[s].clone()).collect();

        let residual = Mat::from_fn(observed, members.len(), |t, j| test.value(t, j) - forecast.loads[(t, j)]);
        let cluster_rmse = if observed > 0 {
            let split = noise_split(residual.as_ref(), fitted.model.decoder())?;
            noise.push(ClusterNoise {
                members: members.clone(),
                modal: split.modal,
                innovation: split.innovation,
            });
            let actual: Vec<f64> = (0..observed).flat_map(|t| test.row(t)).collect();
            let predicted: Vec<f64> = (0..observed)
                .flat_map(|t| forecast.loads.row(t).iter().copied().collect::<Vec<_>>())
                .collect();
            Some(rmse(&actual, &predicted)?)
        } else {
            None
        };

        for (j, &s) in members.iter().enumerate() {
            stations[s] = Some(StationForecast {
                cluster: c,
                predicted: (0..horizon).map(|t| forecast.loads[(t, j)]).collect(),
            });
        }
        let evolution = fitted.model.evolution();
        let basis = &fitted.analysis.basis;
        evolutions.push(EvolutionRecord {
            cluster: c,
            stations: ids.clone(),
            frequencies_hz: (0..basis.len()).map(|k| basis.frequency_hz(k)).collect(),
            evolution: (0..evolution.nrows())
                .map(|i| evolution.row(i).iter().copied().collect())
                .collect(),
            off_block_fraction: diagnostics.off_block_fraction,
            skew_deviation: diagnostics.skew_deviation.clone(),
        });
        models.push(ModelRecord {
            cluster: c,
            stations: ids,
            modes: basis.len(),
            state_width: fitted.model.layout().width(),
            off_block_fraction: diagnostics.off_block_fraction,
            rmse: cluster_rmse,
        });
    }

    let panel = &panel;
    let start = spec.train.end;
    let timestamp = move |t: usize| format_timestamp(panel.timestamp(start + t));
    let ids = panel.station_ids();
    let stats = &parts.stats;
    staging.write_json("norm_stats.json", &StatsRecord::new(panel, stats, cfg.normalization))?;
    staging.write_with("forecast.csv", |w| {
        let rows = (0..d).flat_map(|s| {
            let entry = stations[s].as_ref().expect("every station belongs to a cluster");
            (0..horizon).map(move |t| {
                let actual = if t < observed {
                    format_f64(panel.value(start + t, s))
                } else {
                    String::new()
                };
                vec![
                    timestamp(t),
                    ids[s].clone(),
                    entry.cluster.to_string(),
                    format_f64(stats.denormalize_value(s, entry.predicted[t])),
                    actual,
                ]
            })
        });
        write_table(w, &["timestamp", "station", "cluster", "predicted", "actual"], rows)
    })?;

    let mut station_rmse = Vec::new();
    if observed > 0 {
        for s in 0..d {
            let entry = stations[s].as_ref().expect("every station belongs to a cluster");
            let actual: Vec<f64> = (0..observed).map(|t| parts.test.value(t, s)).collect();
            let e = rmse(&actual, &entry.predicted[..observed])?;
            station_rmse.push(vec![ids[s].clone(), entry.cluster.to_string(), format_f64(e)]);
        }
    }
    staging.write_with("rmse.csv", |w| write_table(w, &["station", "cluster", "rmse"], station_rmse))?;
    for (name, pick) in [("noise_modal.csv", true), ("noise_innovation.csv", false)] {
        staging.write_with(name, |w| {
            let rows = noise.iter().flat_map(|part| {
                let m = if pick { &part.modal } else { &part.innovation };
                part.members.iter().enumerate().flat_map(move |(j, &s)| {
                    (0..observed).map(move |t| vec![timestamp(t), ids[s].clone(), format_f64(m[(t, j)])])
                })
            });
            write_table(w, &["timestamp", "station", "value"], rows)
        })?;
    }
    staging.write_json("kpsi.json", &evolutions)?;

    let overall_rmse = if observed > 0 {
        let actual: Vec<f64> = (0..d)
            .flat_map(|s| (0..observed).map(move |t| (t, s)))
            .map(|(t, s)| parts.test.value(t, s))
            .collect();
        let predicted: Vec<f64> = (0..d)
            .flat_map(|s| stations[s].as_ref().expect("assigned").predicted[..observed].to_vec())
            .collect();
        Some(rmse(&actual, &predicted)?)
    } else {
        None
    };
    let summary = ForecastSummary {
        train: spec.clone(),
        horizon,
        models,
        overall_rmse,
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    staging.commit("forecast", cfg, summary, warnings)?;
    Ok(())
}
