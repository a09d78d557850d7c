//! End-to-end Koopman analysis and forecasting of a normalized panel.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::data::LoadPanel;
use crate::embedding::{markov_from_panel, DelayConfig, DelayGraph, MarkovMatrix};
use crate::error::{Error, Result};
use crate::forecast::{BlockLayout, EvolutionMode, Forecast, ForecastModel};
use crate::spectral::{
    galerkin_matrices, galerkin_solve, generator_action, kernel_eigs, BasisParams, GalerkinMatrices,
    KernelEigenbasis, KoopmanBasis, NystromExtender, SpectralConfig,
};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KoopmanConfig {
    pub delay: DelayConfig,
    pub spectral: SpectralConfig,
}

impl KoopmanConfig {
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        self.delay.validate(n_samples)?;
        let n_points = n_samples + 1 - self.delay.delays;
        let s = &self.spectral;
        if s.l == 0 || s.l > n_points {
            return Err(Error::Config(format!("need 1 <= l <= N_e = {n_points}, got {}", s.l)));
        }
        if s.l_prime == 0 || s.l_prime > s.l {
            return Err(Error::Config(format!("need 1 <= l' <= l = {}, got {}", s.l, s.l_prime)));
        }
        if !(s.theta >= 0.0 && s.theta.is_finite()) {
            return Err(Error::Config(format!("theta must be nonnegative, got {}", s.theta)));
        }
        Ok(())
    }

    pub fn basis_params(&self) -> BasisParams {
        BasisParams {
            delays: self.delay.delays,
            l: self.spectral.l,
            l_prime: self.spectral.l_prime,
            theta: self.spectral.theta,
        }
    }
}

/// Every intermediate of one Koopman analysis.
#[derive(Clone, Debug)]
pub struct KoopmanAnalysis {
    pub graph: DelayGraph,
    pub markov: MarkovMatrix,
    pub kernel: KernelEigenbasis,
    pub galerkin: GalerkinMatrices,
    pub basis: KoopmanBasis,
}

/// Graph, kernel eigenbasis and Koopman basis, with the spectral invariants
/// checked on the way.
pub fn analyze(panel: &LoadPanel, config: &KoopmanConfig) -> Result<KoopmanAnalysis> {
    config.validate(panel.n_samples())?;
    let (graph, markov) = markov_from_panel(panel, &config.delay)?;
    let kernel = kernel_eigs(&markov, config.spectral.l, graph.epsilon())?;
    kernel.check_invariants()?;
    let generator = generator_action(kernel.functions(), panel.sample_interval())?;
    let galerkin = galerkin_matrices(&kernel, generator.as_ref(), config.spectral.theta)?;
    let basis = galerkin_solve(&galerkin, &kernel, panel.sample_interval(), config.spectral.l_prime)?;
    basis.check_invariants()?;
    Ok(KoopmanAnalysis {
        graph,
        markov,
        kernel,
        galerkin,
        basis,
    })
}

/// Forecasting model fitted on the eigenfunctions of a training panel.
#[derive(Clone, Debug)]
pub struct KoopmanForecaster {
    pub analysis: KoopmanAnalysis,
    pub model: ForecastModel,
    pub training: LoadPanel,
    /// Realified training states, one row per embedded point.
    pub states: Mat<f64>,
    /// Training samples aligned with the states (physical rows `Q−1..N`).
    pub observations: Mat<f64>,
}

impl KoopmanForecaster {
    pub fn fit(training: &LoadPanel, config: &KoopmanConfig, mode: EvolutionMode) -> Result<Self> {
        let analysis = analyze(training, config)?;
        let layout = BlockLayout::from_basis(&analysis.basis)?;
        let states = layout.realify(&analysis.basis);
        let q = config.delay.delays;
        let observations = Mat::from_fn(states.nrows(), training.n_stations(), |n, s| {
            training.value(n + q - 1, s)
        });
        let model = ForecastModel::fit(
            states.as_ref(),
            observations.as_ref(),
            layout,
            mode,
            training.sample_interval(),
        )?;
        Ok(Self {
            analysis,
            model,
            training: training.clone(),
            states,
            observations,
        })
    }

    /// Pure rollout from the last training state.
    pub fn forecast(&self, horizon: usize) -> Result<Forecast> {
        self.model.forecast(horizon)
    }

    /// Rollout that re-anchors the state every `interval` steps by extending
    /// the eigenfunctions to the latest observed delay window.
    ///
    /// `observed` holds the normalized samples that follow the training
    /// window; only rows before each anchor point are used.
    pub fn forecast_reanchored(&self, observed: &LoadPanel, horizon: usize, interval: usize) -> Result<Forecast> {
        if interval == 0 {
            return Err(Error::Config("re-anchoring interval must be positive".into()));
        }
        if observed.n_stations() != self.training.n_stations() {
            return Err(Error::Alignment("observed panel has a different station count".into()));
        }
        let extender = NystromExtender::new(
            &self.analysis.graph,
            &self.analysis.markov,
            &self.analysis.kernel,
            &self.training,
        )?;
        let q = self.analysis.graph.config().delays;
        let d = self.training.n_stations();
        let n_train = self.training.n_samples();
        let mut states = Mat::zeros(horizon, self.model.layout().width());
        let mut loads = Mat::zeros(horizon, d);
        let mut done = 0;
        let mut origin = self.model.origin().to_vec();
        while done < horizon {
            if done > 0 {
                if done > observed.n_samples() {
                    return Err(Error::History {
                        needed: done,
                        found: observed.n_samples(),
                    });
                }
                let history = Mat::from_fn(q, d, |r, s| {
                    let t = n_train + done - q + r;
                    if t < n_train {
                        self.training.value(t, s)
                    } else {
                        observed.value(t - n_train, s)
                    }
                });
                let psi = extender.extend_koopman(&self.analysis.basis, history.as_ref())?;
                origin = self.model.layout().realify_state(&psi);
            }
            let span = interval.min(horizon - done);
            let part = self.model.forecast_from(&origin, span)?;
            for t in 0..span {
                for j in 0..states.ncols() {
                    states[(done + t, j)] = part.states[(t, j)];
                }
                for s in 0..d {
                    loads[(done + t, s)] = part.loads[(t, s)];
                }
            }
            done += span;
        }
        Ok(Forecast { states, loads })
    }
}
