#![allow(dead_code)]

use koopman_core::data::minmax_normalize;
use koopman_core::embedding::DelayConfig;
use koopman_core::pipeline::{analyze, KoopmanAnalysis, KoopmanConfig};
use koopman_core::spectral::SpectralConfig;
use koopman_core::synth::{Family, SynthConfig, ToneSpec};
use koopman_core::LoadPanel;

pub fn config(delays: usize, knn: usize, l: usize, l_prime: usize) -> KoopmanConfig {
    KoopmanConfig {
        delay: DelayConfig::new(delays, knn),
        spectral: SpectralConfig { l, l_prime, theta: 1e-9 },
    }
}

/// Hourly daily + 60 h tones on four stations, normalized.
pub fn two_tone(n_samples: usize, seed: u64) -> LoadPanel {
    let cfg = SynthConfig {
        n_samples,
        n_stations: 4,
        families: vec![Family {
            tones: vec![ToneSpec::new(24.0, 0.2, 0.4), ToneSpec::new(60.0, 0.1, 0.3)],
        }],
        seed,
        ..SynthConfig::default()
    };
    minmax_normalize(&cfg.generate().unwrap().panel).0
}

pub struct Fixture {
    pub panel: LoadPanel,
    pub config: KoopmanConfig,
    pub analysis: KoopmanAnalysis,
}

pub fn fixture() -> Fixture {
    let panel = two_tone(600, 11);
    let config = config(48, 20, 40, 15);
    let analysis = analyze(&panel, &config).unwrap();
    Fixture {
        panel,
        config,
        analysis,
    }
}
