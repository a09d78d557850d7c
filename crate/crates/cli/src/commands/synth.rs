//! Synthetic load panels: tones per station family, noise and level shifts.

use std::path::Path;

use serde::Serialize;

use koopman_core::artifact::write_table;
use koopman_core::data::write_csv;
use koopman_core::Result;

use crate::config::PipelineConfig;
use crate::staging::Staging;

#[derive(Debug, Serialize)]
struct SynthSummary {
    n_samples: usize,
    n_stations: usize,
    families: usize,
}

pub fn run(cfg: &PipelineConfig, out: &Path, force: bool) -> Result<()> {
    let synth = cfg.synth.generate()?;
    let mut staging = Staging::new(out, force)?;
    let panel = &synth.panel;
    staging.write_with("panel.csv", |w| write_csv(panel, w))?;
    let clean = panel.with_values(synth.clean.clone())?;
    staging.write_with("clean.csv", |w| write_csv(&clean, w))?;
    staging.write_with("families.csv", |w| {
        let rows = panel
            .station_ids()
            .iter()
            .zip(&synth.families)
            .map(|(id, f)| vec![id.clone(), f.to_string()]);
        write_table(w, &["station_id", "family"], rows)
    })?;
    let summary = SynthSummary {
        n_samples: panel.n_samples(),
        n_stations: panel.n_stations(),
        families: cfg.synth.families.len(),
    };
    staging.commit("synth", &cfg.synth, summary, Vec::new())?;
    Ok(())
}
