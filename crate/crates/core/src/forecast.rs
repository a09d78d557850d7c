//! Linear evolution of eigenfunction states, decoding to loads, and residual
//! diagnostics.
//!
//! All regression happens in the realified basis: a conjugate pair
//! `(ψ, ψ̄)` becomes the two real columns `(√2 Re ψ, √2 Im ψ)`.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::linalg::{column_space_projector, least_squares};
use crate::spectral::KoopmanBasis;

/// One diagonal block of the realified basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    /// A real mode (the trivial mode or a real eigenvalue): one column.
    Single { mode: usize },
    /// A conjugate pair: two columns, `ω` in rad/s of the positive member.
    Pair { mode: usize, partner: usize, omega: f64 },
}

impl Block {
    pub fn width(&self) -> usize {
        match self {
            Block::Single { .. } => 1,
            Block::Pair { .. } => 2,
        }
    }
}

/// Partition of the realified columns into blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub blocks: Vec<Block>,
}

impl BlockLayout {
    pub fn from_basis(basis: &KoopmanBasis) -> Result<Self> {
        let mut blocks = Vec::new();
        for k in 0..basis.len() {
            let p = basis.partner(k);
            if p == k {
                blocks.push(Block::Single { mode: k });
            } else if basis.omega(k) > 0.0 {
                blocks.push(Block::Pair {
                    mode: k,
                    partner: p,
                    omega: basis.omega(k),
                });
            } else if basis.omega(p) <= 0.0 {
                return Err(Error::Pairing(format!(
                    "modes {k} and {p} are paired but neither has positive frequency"
                )));
            }
        }
        Ok(Self { blocks })
    }

    pub fn width(&self) -> usize {
        self.blocks.iter().map(Block::width).sum()
    }

    /// Column offset of each block.
    pub fn offsets(&self) -> Vec<usize> {
        let mut at = 0;
        self.blocks
            .iter()
            .map(|b| {
                let o = at;
                at += b.width();
                o
            })
            .collect()
    }

    /// Realified samples `N_e x width`.
    pub fn realify(&self, basis: &KoopmanBasis) -> Mat<f64> {
        let n = basis.n_points();
        let mut out = Mat::zeros(n, self.width());
        for (block, off) in self.blocks.iter().zip(self.offsets()) {
            match *block {
                Block::Single { mode } => {
                    for (t, v) in basis.function(mode).iter().enumerate() {
                        out[(t, off)] = v.re;
                    }
                }
                Block::Pair { mode, .. } => {
                    for (t, v) in basis.function(mode).iter().enumerate() {
                        out[(t, off)] = std::f64::consts::SQRT_2 * v.re;
                        out[(t, off + 1)] = std::f64::consts::SQRT_2 * v.im;
                    }
                }
            }
        }
        out
    }

    /// Realified state from complex mode values at one time.
    pub fn realify_state(&self, values: &[crate::C64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        for block in &self.blocks {
            match *block {
                Block::Single { mode } => out.push(values[mode].re),
                Block::Pair { mode, .. } => {
                    out.push(std::f64::consts::SQRT_2 * values[mode].re);
                    out.push(std::f64::consts::SQRT_2 * values[mode].im);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionMode {
    /// Roll the fitted matrix forward.
    #[default]
    Regression,
    /// Rotate each pair by its own frequency; real modes stay frozen.
    Phase,
}

/// Least-squares `K` with `Ψ⁺ ≈ K Ψ⁻`; `states` has one row per time step.
pub fn fit_evolution(states: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let (t, m) = (states.nrows(), states.ncols());
    if t < m + 1 {
        return Err(Error::Fit(format!(
            "{t} samples cannot determine a {m} x {m} evolution matrix"
        )));
    }
    let before = states.subrows(0, t - 1);
    let after = states.subrows(1, t - 1);
    let fit = least_squares(before, after)?;
    Ok(fit.coefficients.transpose().to_owned())
}

/// Least-squares decoder `C` (`d x m`) with `x ≈ C s`.
pub fn fit_decoder(observations: MatRef<'_, f64>, states: MatRef<'_, f64>) -> Result<Mat<f64>> {
    if observations.nrows() != states.nrows() {
        return Err(Error::Alignment(format!(
            "{} observations for {} states",
            observations.nrows(),
            states.nrows()
        )));
    }
    let fit = least_squares(states, observations)?;
    Ok(fit.coefficients.transpose().to_owned())
}

#[derive(Clone, Debug)]
pub struct ForecastModel {
    evolution: Mat<f64>,
    decoder: Mat<f64>,
    layout: BlockLayout,
    mode: EvolutionMode,
    sample_interval: f64,
    origin: Vec<f64>,
    stats: Option<NormStats>,
}

impl ForecastModel {
    /// Fits `K` and `C` on realified training states (rows are time steps).
    /// The forecast origin is the last training state.
    pub fn fit(
        states: MatRef<'_, f64>,
        observations: MatRef<'_, f64>,
        layout: BlockLayout,
        mode: EvolutionMode,
        sample_interval: f64,
    ) -> Result<Self> {
        if states.ncols() != layout.width() {
            return Err(Error::Alignment(format!(
                "{} state columns for a layout of width {}",
                states.ncols(),
                layout.width()
            )));
        }
        let evolution = fit_evolution(states)?;
        let decoder = fit_decoder(observations, states)?;
        let origin = states.row(states.nrows() - 1).iter().copied().collect();
        Ok(Self {
            evolution,
            decoder,
            layout,
            mode,
            sample_interval,
            origin,
            stats: None,
        })
    }

    pub fn with_stats(mut self, stats: NormStats) -> Self {
        self.stats = Some(stats);
        self
    }

    pub fn with_mode(mut self, mode: EvolutionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn evolution(&self) -> MatRef<'_, f64> {
        self.evolution.as_ref()
    }

    pub fn decoder(&self) -> MatRef<'_, f64> {
        self.decoder.as_ref()
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn mode(&self) -> EvolutionMode {
        self.mode
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    pub fn decode(&self, state: &[f64]) -> Vec<f64> {
        let c = &self.decoder;
        (0..c.nrows())
            .map(|i| (0..c.ncols()).map(|j| c[(i, j)] * state[j]).sum())
            .collect()
    }

    fn step(&self, state: &[f64], steps_from_origin: usize, origin: &[f64]) -> Vec<f64> {
        match self.mode {
            EvolutionMode::Regression => {
                let k = &self.evolution;
                (0..k.nrows())
                    .map(|i| (0..k.ncols()).map(|j| k[(i, j)] * state[j]).sum())
                    .collect()
            }
            EvolutionMode::Phase => {
                let mut out = origin.to_vec();
                for (block, off) in self.layout.blocks.iter().zip(self.layout.offsets()) {
                    if let Block::Pair { omega, .. } = *block {
                        let angle = omega * self.sample_interval * steps_from_origin as f64;
                        let (s, c) = angle.sin_cos();
                        let (re, im) = (origin[off], origin[off + 1]);
                        out[off] = c * re - s * im;
                        out[off + 1] = s * re + c * im;
                    }
                }
                out
            }
        }
    }

    /// States and decoded loads for steps `1..=horizon` after `state0`
    /// (normalized scale). Rows are time steps.
    pub fn forecast_from(&self, state0: &[f64], horizon: usize) -> Result<Forecast> {
        if horizon == 0 {
            return Err(Error::Config("forecast horizon must be positive".into()));
        }
        if state0.len() != self.layout.width() {
            return Err(Error::Alignment(format!(
                "initial state has {} entries, model expects {}",
                state0.len(),
                self.layout.width()
            )));
        }
        let d = self.decoder.nrows();
        let mut states = Mat::zeros(horizon, state0.len());
        let mut loads = Mat::zeros(horizon, d);
        let mut state = state0.to_vec();
        for t in 0..horizon {
            state = self.step(&state, t + 1, state0);
            if state.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: t + 1 });
            }
            let x = self.decode(&state);
            for (j, v) in state.iter().enumerate() {
                states[(t, j)] = *v;
            }
            for (j, v) in x.iter().enumerate() {
                loads[(t, j)] = *v;
            }
        }
        Ok(Forecast { states, loads })
    }

    pub fn forecast(&self, horizon: usize) -> Result<Forecast> {
        self.forecast_from(&self.origin.clone(), horizon)
    }

    /// Maps normalized forecasts back to physical units.
    pub fn denormalize(&self, loads: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let stats = self
            .stats
            .as_ref()
            .ok_or_else(|| Error::Config("model carries no normalization statistics".into()))?;
        if stats.min.len() != loads.ncols() {
            return Err(Error::Alignment("statistics do not match forecast width".into()));
        }
        Ok(Mat::from_fn(loads.nrows(), loads.ncols(), |t, s| {
            stats.denormalize_value(s, loads[(t, s)])
        }))
    }
}

#[derive(Clone, Debug)]
pub struct Forecast {
    pub states: Mat<f64>,
    /// `horizon x d`, normalized scale.
    pub loads: Mat<f64>,
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(Error::Alignment(format!(
            "rmse over {} and {} values",
            actual.len(),
            predicted.len()
        )));
    }
    let ss: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok((ss / actual.len() as f64).sqrt())
}

/// Residual split into the part inside the decoder's column space and the rest.
#[derive(Clone, Debug)]
pub struct NoiseSplit {
    pub modal: Mat<f64>,
    pub innovation: Mat<f64>,
}

/// `η_m = C C⁺ r` and `η_i = r − η_m` for each time row of `residual`.
pub fn noise_split(residual: MatRef<'_, f64>, decoder: MatRef<'_, f64>) -> Result<NoiseSplit> {
    if residual.ncols() != decoder.nrows() {
        return Err(Error::Alignment(format!(
            "residual has {} stations, decoder has {}",
            residual.ncols(),
            decoder.nrows()
        )));
    }
    let projector = column_space_projector(decoder)?;
    let modal = residual * projector.transpose();
    let innovation = residual - &modal;
    Ok(NoiseSplit { modal, innovation })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    /// Off-block share of the Frobenius energy, `‖K − blockdiag(K)‖²_F / ‖K‖²_F`.
    pub off_block_fraction: f64,
    /// `|b + c| / (|b| + |c|)` of each pair block `[[a, b], [c, d]]`.
    pub skew_deviation: Vec<f64>,
}

pub fn block_diagonality(evolution: MatRef<'_, f64>, layout: &BlockLayout) -> Result<BlockDiagnostics> {
    let m = layout.width();
    if evolution.nrows() != m || evolution.ncols() != m {
        return Err(Error::Alignment(format!(
            "{}x{} matrix for a layout of width {m}",
            evolution.nrows(),
            evolution.ncols()
        )));
    }
    let mut owner = vec![0usize; m];
    for (b, (block, off)) in layout.blocks.iter().zip(layout.offsets()).enumerate() {
        for o in off..off + block.width() {
            owner[o] = b;
        }
    }
    let (mut total, mut off_block) = (0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            let v = evolution[(i, j)] * evolution[(i, j)];
            total += v;
            if owner[i] != owner[j] {
                off_block += v;
            }
        }
    }
    let skew_deviation = layout
        .blocks
        .iter()
        .zip(layout.offsets())
        .filter(|(b, _)| matches!(b, Block::Pair { .. }))
        .map(|(_, o)| {
            let (b, c) = (evolution[(o, o + 1)], evolution[(o + 1, o)]);
            let den = b.abs() + c.abs();
            if den > 0.0 {
                (b + c).abs() / den
            } else {
                0.0
            }
        })
        .collect();
    Ok(BlockDiagnostics {
        off_block_fraction: if total > 0.0 { off_block / total } else { 0.0 },
        skew_deviation,
    })
}
