//! Koopman eigenfunctions, modes and spectra of a whole panel.

use std::path::Path;

use serde::Serialize;

use koopman_core::data::{load_csv, minmax_normalize_with};
use koopman_core::pipeline::analyze;
use koopman_core::spatiotemporal::{mode_power_spectrum, project_modes, write_spectrum, write_temporal};
use koopman_core::Result;

use super::StatsRecord;
use crate::config::PipelineConfig;
use crate::staging::Staging;

#[derive(Debug, Serialize)]
pub struct SpectraSummary {
    pub n_samples: usize,
    pub n_stations: usize,
    pub n_points: usize,
    pub epsilon: f64,
    pub modes: Vec<ModeSummary>,
}

#[derive(Debug, Serialize)]
pub struct ModeSummary {
    pub mode: usize,
    pub frequency_hz: f64,
    pub energy: f64,
    pub partner: usize,
}

pub fn run(cfg: &PipelineConfig, out: &Path, force: bool) -> Result<()> {
    cfg.validate_koopman()?;
    let panel = load_csv(cfg.input()?, &cfg.schema)?;
    cfg.koopman.validate(panel.n_samples())?;
    let (normalized, stats) = minmax_normalize_with(&panel, cfg.normalization);
    let mut staging = Staging::new(out, force)?;

    let analysis = analyze(&normalized, &cfg.koopman)?;
    let basis = &analysis.basis;
    let projection = project_modes(&normalized, basis, cfg.koopman.delay.delays)?;

    staging.write_json("norm_stats.json", &StatsRecord::new(&panel, &stats, cfg.normalization))?;
    staging.write_json("graph.json", &analysis.graph.header())?;
    staging.write_with("graph.csv", |w| analysis.graph.write_triplets(w))?;
    staging.write_with("markov.csv", |w| analysis.markov.write_triplets(w))?;
    staging.write_json("basis.json", &basis.header(cfg.koopman.basis_params()))?;
    staging.write_with("basis.csv", |w| basis.write_functions(w))?;
    staging.write_with("modes.csv", |w| projection.write_modes(basis, w))?;
    for k in 0..cfg.export_modes().min(basis.len()) {
        staging.write_with(&format!("temporal_{k}.csv"), |w| write_temporal(&projection, basis, k, w))?;
        let spectrum = mode_power_spectrum(basis, k)?;
        staging.write_with(&format!("spectrum_{k}.csv"), |w| write_spectrum(&spectrum, w))?;
    }

    let summary = SpectraSummary {
        n_samples: panel.n_samples(),
        n_stations: panel.n_stations(),
        n_points: basis.n_points(),
        epsilon: analysis.graph.epsilon(),
        modes: (0..basis.len())
            .map(|k| ModeSummary {
                mode: k,
                frequency_hz: basis.frequency_hz(k),
                energy: basis.energies()[k],
                partner: basis.partner(k),
            })
            .collect(),
    };
    staging.commit("spectra", cfg, summary, Vec::new())?;
    Ok(())
}
