//! Synthetic load panels: tones, white and red noise, level shifts.

use std::f64::consts::TAU;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LoadPanel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToneSpec {
    /// Period in samples.
    pub period: f64,
    /// Per-station amplitude drawn uniformly from `[lo, hi]`.
    pub amplitude: [f64; 2],
    /// Common phase in radians; `None` draws an independent phase per station.
    pub phase: Option<f64>,
    /// Per-station phase spread around `phase`, uniform in `[-jitter, jitter]`.
    pub phase_jitter: f64,
}

impl Default for ToneSpec {
    fn default() -> Self {
        Self {
            period: 24.0,
            amplitude: [0.1, 0.3],
            phase: None,
            phase_jitter: 0.0,
        }
    }
}

impl ToneSpec {
    pub fn new(period: f64, lo: f64, hi: f64) -> Self {
        Self {
            period,
            amplitude: [lo, hi],
            ..Self::default()
        }
    }

    pub fn with_phase(mut self, phase: f64, jitter: f64) -> Self {
        self.phase = Some(phase);
        self.phase_jitter = jitter;
        self
    }
}

/// Stations of a family share the same tone periods.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub tones: Vec<ToneSpec>,
}

/// Stationary AR(1) process with unit variance, scaled by `amplitude`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedNoise {
    pub rho: f64,
    pub amplitude: f64,
}

/// Additive offset on `[start, start + length)` applied to every station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelShift {
    pub start: usize,
    pub length: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_stations: usize,
    /// Seconds.
    pub sample_interval: f64,
    pub start_timestamp: f64,
    /// Base level added to every station.
    pub level: f64,
    /// Stations are split into contiguous, nearly equal blocks, one per family.
    pub families: Vec<Family>,
    /// White-noise standard deviation as a fraction of each station's clean range.
    pub noise: f64,
    pub red_noise: Option<RedNoise>,
    pub level_shifts: Vec<LevelShift>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 1344,
            n_stations: 10,
            sample_interval: 3600.0,
            start_timestamp: 0.0,
            level: 0.5,
            families: vec![Family {
                tones: vec![ToneSpec::new(24.0, 0.1, 0.3), ToneSpec::new(168.0, 0.1, 0.3)],
            }],
            noise: 0.0,
            red_noise: None,
            level_shifts: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthPanel {
    pub panel: LoadPanel,
    /// Signal before white noise, `N x d`.
    pub clean: Mat<f64>,
    /// Injected white noise, `N x d`.
    pub noise: Mat<f64>,
    /// Family index of each station.
    pub families: Vec<usize>,
}

impl SynthConfig {
    pub fn family_of(&self, station: usize) -> usize {
        station * self.families.len() / self.n_stations
    }

    pub fn generate(&self) -> Result<SynthPanel> {
        if self.families.is_empty() {
            return Err(Error::Config("synthetic panel needs at least one family".into()));
        }
        if self.n_stations == 0 || self.n_samples < 2 {
            return Err(Error::Config("synthetic panel needs N >= 2 and d >= 1".into()));
        }
        if let Some(red) = &self.red_noise {
            if !(red.rho.abs() < 1.0) {
                return Err(Error::Config(format!("red-noise rho must lie in (-1, 1), got {}", red.rho)));
            }
        }
        let (n, d) = (self.n_samples, self.n_stations);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut clean = Mat::zeros(n, d);
        let families: Vec<usize> = (0..d).map(|s| self.family_of(s)).collect();
        for s in 0..d {
            for tone in &self.families[families[s]].tones {
                let [lo, hi] = tone.amplitude;
                let amp = if hi > lo { rng.random_range(lo..hi) } else { lo };
                let phase = match tone.phase {
                    None => rng.random_range(0.0..TAU),
                    Some(p) if tone.phase_jitter > 0.0 => p + rng.random_range(-tone.phase_jitter..tone.phase_jitter),
                    Some(p) => p,
                };
                for t in 0..n {
                    clean[(t, s)] += amp * (TAU * t as f64 / tone.period + phase).sin();
                }
            }
            if let Some(red) = &self.red_noise {
                let innovation = (1.0 - red.rho * red.rho).sqrt();
                let mut z: f64 = rng.sample(StandardNormal);
                for t in 0..n {
                    if t > 0 {
                        let e: f64 = rng.sample(StandardNormal);
                        z = red.rho * z + innovation * e;
                    }
                    clean[(t, s)] += red.amplitude * z;
                }
            }
            for t in 0..n {
                clean[(t, s)] += self.level;
            }
            for shift in &self.level_shifts {
                for t in shift.start..(shift.start + shift.length).min(n) {
                    clean[(t, s)] += shift.delta;
                }
            }
        }
        let mut noise = Mat::zeros(n, d);
        if self.noise > 0.0 {
            for s in 0..d {
                let col = clean.col(s);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let std = self.noise * (hi - lo);
                for t in 0..n {
                    let e: f64 = rng.sample(StandardNormal);
                    noise[(t, s)] = std * e;
                }
            }
        }
        let values = &clean + &noise;
        let ids = (0..d).map(|s| format!("st{s:03}")).collect();
        let panel = LoadPanel::new(values, self.sample_interval, ids, self.start_timestamp)?;
        Ok(SynthPanel {
            panel,
            clean,
            noise,
            families,
        })
    }
}
