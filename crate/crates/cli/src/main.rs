use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use koopman_core::Result;

mod commands;
mod config;
mod staging;

use config::{Overrides, PipelineConfig};

/// Koopman spectral analysis, clustering and forecasting of load panels.
#[derive(Parser, Debug)]
#[command(name = "koopman", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Output directory; created atomically with a manifest.json.
    #[arg(long, short)]
    out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    flags: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Koopman eigenfunctions, modes and spectra of the input panel.
    Spectra(Common),
    /// Cluster stations on a diffusion-potential embedding.
    Cluster(Common),
    /// Fit one forecasting model per cluster and forecast the test window.
    Forecast(Common),
    /// Score a forecast directory against a truth panel.
    Evaluate {
        /// Directory written by `forecast`.
        #[arg(long)]
        forecast: PathBuf,
        /// CSV panel with the observed loads.
        #[arg(long)]
        truth: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic panel.
    Synth {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        stations: Option<usize>,
        /// Standard deviation of white noise.
        #[arg(long)]
        noise: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Spectra(c) => commands::spectra::run(&PipelineConfig::resolve(&c.flags)?, &c.out, c.force),
        Command::Cluster(c) => commands::cluster::run(&PipelineConfig::resolve(&c.flags)?, &c.out, c.force),
        Command::Forecast(c) => commands::forecast::run(&PipelineConfig::resolve(&c.flags)?, &c.out, c.force),
        Command::Evaluate { forecast, truth, common } => {
            let cfg = PipelineConfig::resolve(&common.flags)?;
            commands::evaluate::run(&cfg, &forecast, &truth, &common.out, common.force)
        }
        Command::Synth {
            samples,
            stations,
            noise,
            common,
        } => {
            let mut cfg = PipelineConfig::resolve(&common.flags)?;
            if let Some(v) = samples {
                cfg.synth.n_samples = v;
            }
            if let Some(v) = stations {
                cfg.synth.n_stations = v;
            }
            if let Some(v) = noise {
                cfg.synth.noise = v;
            }
            commands::synth::run(&cfg, &common.out, common.force)
        }
    }
}

fn main() -> ExitCode {
    // Sequential dense kernels keep floating-point reductions in a fixed order.
    faer::set_global_parallelism(faer::Par::Seq);
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.code());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
