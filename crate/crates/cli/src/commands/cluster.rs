//! Station clustering on a diffusion-potential embedding.

use std::path::Path;

use serde::Serialize;

use koopman_core::data::load_csv;
use koopman_core::phate::{phate, PhateEmbedding, PhateMeta};
use koopman_core::Result;

use crate::config::PipelineConfig;
use crate::staging::Staging;

#[derive(Debug, Serialize)]
pub struct ClusterSummary {
    #[serde(flatten)]
    pub meta: PhateMeta,
    pub cluster_sizes: Vec<usize>,
}

impl ClusterSummary {
    pub fn new(embedding: &PhateEmbedding) -> Self {
        Self {
            meta: embedding.meta(),
            cluster_sizes: embedding.members().iter().map(Vec::len).collect(),
        }
    }
}

pub fn write_embedding(staging: &mut Staging, embedding: &PhateEmbedding) -> Result<()> {
    staging.write_with("phate.csv", |w| embedding.write_csv(w))?;
    staging.write_json("phate_meta.json", &embedding.meta())
}

pub fn run(cfg: &PipelineConfig, out: &Path, force: bool) -> Result<()> {
    cfg.validate_phate()?;
    let panel = load_csv(cfg.input()?, &cfg.schema)?;
    let mut staging = Staging::new(out, force)?;
    let embedding = phate(&panel, &cfg.phate)?;
    write_embedding(&mut staging, &embedding)?;
    staging.commit("cluster", cfg, ClusterSummary::new(&embedding), Vec::new())?;
    Ok(())
}
