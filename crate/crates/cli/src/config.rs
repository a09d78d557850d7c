//! The single JSON configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use koopman_core::data::{CsvSchema, NormScope, SplitSpec};
use koopman_core::forecast::EvolutionMode;
use koopman_core::phate::PhateConfig;
use koopman_core::pipeline::KoopmanConfig;
use koopman_core::synth::SynthConfig;
use koopman_core::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub schema: CsvSchema,
    pub normalization: NormScope,
    pub koopman: KoopmanConfig,
    pub forecast: ForecastSettings,
    pub phate: PhateConfig,
    pub synth: SynthConfig,
    /// Number of leading modes that get temporal and spectrum files.
    pub export_modes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSettings {
    pub horizon: usize,
    pub mode: EvolutionMode,
    /// Re-anchor the state on observed data every this many steps.
    pub reanchor_interval: Option<usize>,
    /// Defaults to holding out the last `horizon` samples.
    pub split: Option<SplitSpec>,
    pub clustering: Clustering,
}

impl Default for ForecastSettings {
    fn default() -> Self {
        Self {
            horizon: 168,
            mode: EvolutionMode::Regression,
            reanchor_interval: None,
            split: None,
            clustering: Clustering::Single,
        }
    }
}

/// How stations are grouped into forecasting models.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clustering {
    /// One model for all stations.
    #[default]
    Single,
    /// Cluster the training window with the `phate` settings.
    Phate,
    /// Labels from an existing `phate.csv`.
    File(PathBuf),
}

pub const DEFAULT_EXPORT_MODES: usize = 10;

/// Flags shared by all subcommands; each overrides the matching config field.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Input CSV panel.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Number of delays.
    #[arg(long)]
    pub delays: Option<usize>,
    /// Nearest neighbours kept per embedded point.
    #[arg(long)]
    pub knn: Option<usize>,
    /// Kernel eigenfunctions.
    #[arg(long)]
    pub l: Option<usize>,
    /// Koopman eigenfunctions kept.
    #[arg(long = "l-prime")]
    pub l_prime: Option<usize>,
    /// Diffusion regularization.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Forecast horizon in samples.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Evolution mode: regression or phase.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<EvolutionMode>,
    #[arg(long)]
    pub reanchor: Option<usize>,
    /// Station clusters.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Station neighbours for clustering.
    #[arg(long = "phate-knn")]
    pub phate_knn: Option<usize>,
    /// Cluster with PHATE before forecasting.
    #[arg(long, conflicts_with = "cluster_file")]
    pub cluster: bool,
    /// Use the labels of an existing phate.csv.
    #[arg(long = "cluster-file")]
    pub cluster_file: Option<PathBuf>,
    /// Seed of the synthetic generator.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "export-modes")]
    pub export_modes: Option<usize>,
}

fn parse_mode(raw: &str) -> std::result::Result<EvolutionMode, String> {
    match raw {
        "regression" => Ok(EvolutionMode::Regression),
        "phase" => Ok(EvolutionMode::Phase),
        other => Err(format!("unknown evolution mode {other:?}")),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(flags: &Overrides) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(flags);
        Ok(cfg)
    }

    pub fn apply(&mut self, flags: &Overrides) {
        if let Some(v) = &flags.input {
            self.input = Some(v.clone());
        }
        let k = &mut self.koopman;
        if let Some(v) = flags.delays {
            k.delay.delays = v;
        }
        if let Some(v) = flags.knn {
            k.delay.knn = v;
        }
        if let Some(v) = flags.l {
            k.spectral.l = v;
        }
        if let Some(v) = flags.l_prime {
            k.spectral.l_prime = v;
        }
        if let Some(v) = flags.theta {
            k.spectral.theta = v;
        }
        let f = &mut self.forecast;
        if let Some(v) = flags.horizon {
            f.horizon = v;
        }
        if let Some(v) = flags.mode {
            f.mode = v;
        }
        if let Some(v) = flags.reanchor {
            f.reanchor_interval = Some(v);
        }
        if flags.cluster {
            f.clustering = Clustering::Phate;
        }
        if let Some(v) = &flags.cluster_file {
            f.clustering = Clustering::File(v.clone());
        }
        if let Some(v) = flags.clusters {
            self.phate.clusters = v;
        }
        if let Some(v) = flags.phate_knn {
            self.phate.knn = v;
        }
        if let Some(v) = flags.seed {
            self.synth.seed = v;
        }
        if let Some(v) = flags.export_modes {
            self.export_modes = Some(v);
        }
    }

    pub fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::Config("no input file given (--input or \"input\")".into()))
    }

    /// Checks that do not depend on the data, run before anything is read.
    pub fn validate_koopman(&self) -> Result<()> {
        let d = &self.koopman.delay;
        let s = &self.koopman.spectral;
        if d.delays == 0 {
            return Err(Error::Config("delays must be positive".into()));
        }
        if d.knn == 0 {
            return Err(Error::Config("knn must be positive".into()));
        }
        if s.l == 0 {
            return Err(Error::Config("l must be positive".into()));
        }
        if s.l_prime == 0 || s.l_prime > s.l {
            return Err(Error::Config(format!(
                "need 1 <= l' <= l, got l' = {} and l = {}",
                s.l_prime, s.l
            )));
        }
        if !(s.theta >= 0.0 && s.theta.is_finite()) {
            return Err(Error::Config(format!("theta must be nonnegative, got {}", s.theta)));
        }
        Ok(())
    }

    pub fn validate_phate(&self) -> Result<()> {
        let p = &self.phate;
        if p.clusters == 0 {
            return Err(Error::Config("cluster count must be positive".into()));
        }
        if p.dims == 0 || p.knn == 0 || p.t_max == 0 {
            return Err(Error::Config("phate dims, knn and t_max must be positive".into()));
        }
        Ok(())
    }

    pub fn validate_forecast(&self) -> Result<()> {
        self.validate_koopman()?;
        let f = &self.forecast;
        if f.horizon == 0 {
            return Err(Error::Config("forecast horizon must be positive".into()));
        }
        if f.reanchor_interval == Some(0) {
            return Err(Error::Config("re-anchoring interval must be positive".into()));
        }
        if f.clustering == Clustering::Phate {
            self.validate_phate()?;
        }
        Ok(())
    }

    pub fn export_modes(&self) -> usize {
        self.export_modes.unwrap_or(DEFAULT_EXPORT_MODES)
    }
}
