//! Delay-coordinate embedding, delay distances, the symmetrized k-NN graph,
//! the variable-bandwidth Gaussian kernel and its Markov normalization.

use std::io::Write;

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::write_triplets;
use crate::data::LoadPanel;
use crate::error::{Error, Result};
use crate::linalg::CompensatedSum;

/// Bandwidth sweep for the global scale: `2^e` for `e` in `[-30, 10]`.
pub const BANDWIDTH_EXPONENT_RANGE: (f64, f64) = (-30.0, 10.0);
pub const BANDWIDTH_EXPONENT_STEP: f64 = 0.25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    Fixed,
    #[default]
    Variable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelayConfig {
    /// Number of delays `Q`; `Q = 1` is the plain snapshot embedding.
    pub delays: usize,
    pub knn: usize,
    pub bandwidth_mode: BandwidthMode,
    pub alpha: f64,
    pub epsilon_scale: f64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            delays: 168,
            knn: 30,
            bandwidth_mode: BandwidthMode::Variable,
            alpha: 0.5,
            epsilon_scale: 1.0,
        }
    }
}

impl DelayConfig {
    pub fn new(delays: usize, knn: usize) -> Self {
        Self {
            delays,
            knn,
            ..Self::default()
        }
    }

    /// Checks the configuration against a panel of `n_samples` rows.
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if self.delays == 0 || self.delays >= n_samples {
            return Err(Error::Config(format!(
                "delays must satisfy 1 <= Q < N = {n_samples}, got {}",
                self.delays
            )));
        }
        let n_points = n_samples - self.delays + 1;
        if self.knn == 0 || self.knn >= n_points {
            return Err(Error::Config(format!(
                "knn must satisfy 1 <= knn < N_e = {n_points}, got {}",
                self.knn
            )));
        }
        if !(self.epsilon_scale.is_finite() && self.epsilon_scale > 0.0) {
            return Err(Error::Config(format!(
                "epsilon_scale must be positive, got {}",
                self.epsilon_scale
            )));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be finite, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Number of points with a complete delay history.
pub fn embedded_len(n_samples: usize, delays: usize) -> usize {
    n_samples + 1 - delays
}

/// Embedded points as rows: point `n` is `(x_{n+Q-1}, x_{n+Q-2}, ..., x_n)`,
/// i.e. the sample at physical index `n + Q - 1` followed by its history.
pub fn delay_embed(panel: &LoadPanel, delays: usize) -> Result<Mat<f64>> {
    check_delays(panel.n_samples(), delays)?;
    let d = panel.n_stations();
    let n_points = embedded_len(panel.n_samples(), delays);
    Ok(Mat::from_fn(n_points, delays * d, |n, col| {
        let (lag, station) = (col / d, col % d);
        panel.value(n + delays - 1 - lag, station)
    }))
}

fn check_delays(n_samples: usize, delays: usize) -> Result<()> {
    if delays == 0 || delays >= n_samples {
        return Err(Error::Config(format!(
            "delays must satisfy 1 <= Q < N = {n_samples}, got {delays}"
        )));
    }
    Ok(())
}

/// Dense symmetric table of squared distances with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTable {
    n: usize,
    data: Vec<f64>,
}

impl DistanceTable {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Squared Euclidean distances between the rows of `points`.
    pub fn from_points(points: MatRef<'_, f64>) -> Self {
        let n = points.nrows();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| points.row(i).iter().copied().collect())
            .collect();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i + 1..n)
                    .map(|j| {
                        let mut acc = CompensatedSum::default();
                        for (a, b) in rows[i].iter().zip(&rows[j]) {
                            acc.add((a - b) * (a - b));
                        }
                        acc.value()
                    })
                    .collect()
            })
            .collect();
        let mut data = vec![0.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                let j = i + 1 + off;
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }
}

/// Squared delay distances `(1/Q) Σ_k ‖x_{i-k} − x_{j-k}‖²` over embedded points.
///
/// Each diagonal of the table is a sliding window over the same-lag snapshot
/// distances, accumulated with compensated sums so that the result does not
/// depend on how the diagonals are distributed across threads.
pub fn pairwise_delay_distances(panel: &LoadPanel, delays: usize) -> Result<DistanceTable> {
    check_delays(panel.n_samples(), delays)?;
    let n_samples = panel.n_samples();
    let n = embedded_len(n_samples, delays);
    let d = panel.n_stations();
    let rows: Vec<Vec<f64>> = (0..n_samples).map(|t| panel.row(t)).collect();
    let snapshot = |a: usize, b: usize| -> f64 {
        let mut acc = CompensatedSum::default();
        for s in 0..d {
            let diff = rows[a][s] - rows[b][s];
            acc.add(diff * diff);
        }
        acc.value()
    };
    let scale = 1.0 / delays as f64;
    let diagonals: Vec<Vec<f64>> = (1..n)
        .into_par_iter()
        .map(|offset| {
            let terms: Vec<f64> = (0..n_samples - offset).map(|m| snapshot(m, m + offset)).collect();
            let mut window = CompensatedSum::default();
            for &t in &terms[..delays] {
                window.add(t);
            }
            let mut out = Vec::with_capacity(n - offset);
            out.push(window.value().max(0.0) * scale);
            for i in 1..n - offset {
                window.add(terms[i + delays - 1]);
                window.add(-terms[i - 1]);
                out.push(window.value().max(0.0) * scale);
            }
            out
        })
        .collect();
    let mut data = vec![0.0; n * n];
    for (k, diag) in diagonals.iter().enumerate() {
        let offset = k + 1;
        for (i, &v) in diag.iter().enumerate() {
            data[i * n + i + offset] = v;
            data[(i + offset) * n + i] = v;
        }
    }
    Ok(DistanceTable { n, data })
}

/// Compressed-row sparse matrix with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists; columns must be sorted.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let (mut cols, mut values) = (Vec::new(), Vec::new());
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (j, v) in row {
                cols.push(j);
                values.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[k] = f(i, self.cols[k], self.values[k]);
            }
        }
        out
    }
}

/// Symmetrized k-NN graph over embedded points with density estimates and
/// the auto-tuned global bandwidth.
#[derive(Clone, Debug)]
pub struct DelayGraph {
    config: DelayConfig,
    /// Squared delay distances on retained pairs (self included).
    distances: SparseMatrix,
    density: Vec<f64>,
    /// Per-point retention radius: the k_nn-th smallest off-diagonal distance.
    radius: Vec<f64>,
    epsilon0: f64,
}

/// Summary of the k_nn nearest off-diagonal distances of one point.
#[derive(Clone, Copy, Debug)]
pub(crate) struct NeighborStats {
    pub radius: f64,
    pub mean: f64,
}

/// `radius` is the k-th smallest value, `mean` the mean of the k smallest.
pub(crate) fn neighbor_stats(values: &mut [f64], k: usize) -> NeighborStats {
    values.select_nth_unstable_by(k - 1, f64::total_cmp);
    let radius = values[k - 1];
    let mean = values[..k].iter().sum::<f64>() / k as f64;
    NeighborStats { radius, mean }
}

/// Densities `1 / mean` with zero means replaced by the smallest positive mean.
pub(crate) fn densities_from_means(means: &[f64]) -> Vec<f64> {
    let floor = means
        .iter()
        .copied()
        .filter(|&m| m > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    means
        .iter()
        .map(|&m| 1.0 / if m > 0.0 { m } else { floor })
        .collect()
}

pub fn build_graph(distances: &DistanceTable, config: &DelayConfig) -> Result<DelayGraph> {
    let n = distances.len();
    if config.knn == 0 || config.knn >= n {
        return Err(Error::Config(format!(
            "knn must satisfy 1 <= knn < N_e = {n}, got {}",
            config.knn
        )));
    }
    if !(config.epsilon_scale.is_finite() && config.epsilon_scale > 0.0) {
        return Err(Error::Config(format!(
            "epsilon_scale must be positive, got {}",
            config.epsilon_scale
        )));
    }
    let stats: Vec<NeighborStats> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut off: Vec<f64> = distances
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .collect();
            neighbor_stats(&mut off, config.knn)
        })
        .collect();
    let radius: Vec<f64> = stats.iter().map(|s| s.radius).collect();
    let density = densities_from_means(&stats.iter().map(|s| s.mean).collect::<Vec<_>>());

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = distances.row(i);
            (0..n)
                .filter(|&j| j == i || row[j] <= radius[i] || row[j] <= radius[j])
                .map(|j| (j, row[j]))
                .collect()
        })
        .collect();
    let distances = SparseMatrix::from_rows(rows);

    let mut graph = DelayGraph {
        config: config.clone(),
        distances,
        density,
        radius,
        epsilon0: 1.0,
    };
    let scaled: Vec<f64> = graph
        .distances
        .triplets()
        .map(|(i, j, v)| v * graph.density_factor(i, j))
        .collect();
    graph.epsilon0 = tune_bandwidth(&scaled);
    Ok(graph)
}

/// Grid point maximizing `d log S / d log ε` for `S(ε) = Σ exp(−v/ε)`.
pub fn tune_bandwidth(scaled_distances: &[f64]) -> f64 {
    let (lo, hi) = BANDWIDTH_EXPONENT_RANGE;
    let steps = ((hi - lo) / BANDWIDTH_EXPONENT_STEP).round() as usize;
    let exponents: Vec<f64> = (0..=steps)
        .map(|k| lo + k as f64 * BANDWIDTH_EXPONENT_STEP)
        .collect();
    let log_sums: Vec<f64> = exponents
        .par_iter()
        .map(|&e| {
            let eps = e.exp2();
            scaled_distances
                .iter()
                .map(|&v| (-v / eps).exp())
                .sum::<f64>()
                .ln()
        })
        .collect();
    let dx = BANDWIDTH_EXPONENT_STEP * std::f64::consts::LN_2;
    let slope = |k: usize| -> f64 {
        if k == 0 {
            (log_sums[1] - log_sums[0]) / dx
        } else if k == steps {
            (log_sums[steps] - log_sums[steps - 1]) / dx
        } else {
            (log_sums[k + 1] - log_sums[k - 1]) / (2.0 * dx)
        }
    };
    let mut best = 0;
    for k in 1..=steps {
        if slope(k) > slope(best) {
            best = k;
        }
    }
    exponents[best].exp2()
}

impl DelayGraph {
    pub fn config(&self) -> &DelayConfig {
        &self.config
    }

    pub fn n_points(&self) -> usize {
        self.distances.dim()
    }

    /// Retained squared distances, self pairs included.
    pub fn distances(&self) -> &SparseMatrix {
        &self.distances
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.distances.row(i)
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    /// Auto-tuned global bandwidth before `epsilon_scale`.
    pub fn epsilon0(&self) -> f64 {
        self.epsilon0
    }

    /// Global bandwidth actually used by the kernel: `ε₀ · epsilon_scale`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon0 * self.config.epsilon_scale
    }

    fn density_factor(&self, i: usize, j: usize) -> f64 {
        density_factor(&self.config, self.density[i], self.density[j])
    }

    /// Pair bandwidth `ε(x_i, x_j)`.
    pub fn bandwidth(&self, i: usize, j: usize) -> f64 {
        self.epsilon() / self.density_factor(i, j)
    }

    pub fn header(&self) -> GraphHeader {
        GraphHeader {
            n_points: self.n_points(),
            delays: self.config.delays,
            knn: self.config.knn,
            epsilon0: self.epsilon0,
            epsilon_scale: self.config.epsilon_scale,
            alpha: self.config.alpha,
            mode: self.config.bandwidth_mode,
        }
    }

    /// `i,j,value` triplets of the retained squared distances.
    pub fn write_triplets(&self, writer: impl Write) -> Result<()> {
        write_triplets(writer, self.distances.triplets())
    }
}

pub(crate) fn density_factor(config: &DelayConfig, rho_i: f64, rho_j: f64) -> f64 {
    match config.bandwidth_mode {
        BandwidthMode::Fixed => 1.0,
        BandwidthMode::Variable => rho_i.powf(config.alpha) * rho_j.powf(config.alpha),
    }
}

/// JSON header accompanying the triplet files of a graph or Markov matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphHeader {
    pub n_points: usize,
    pub delays: usize,
    pub knn: usize,
    pub epsilon0: f64,
    pub epsilon_scale: f64,
    pub alpha: f64,
    pub mode: BandwidthMode,
}

/// `K_ij = exp(−d²_ij / ε_ij)` on retained pairs.
pub fn kernel_matrix(graph: &DelayGraph) -> Result<SparseMatrix> {
    for (i, j, _) in graph.distances.triplets() {
        let eps = graph.bandwidth(i, j);
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::Bandwidth { i, j, value: eps });
        }
    }
    Ok(graph
        .distances
        .map_values(|i, j, d2| (-d2 / graph.bandwidth(i, j)).exp()))
}

/// `P_ij = K_ij / (D_i q_j^{1/2})` with `q = K·1` and `D_i = Σ_k K_ik q_k^{-1/2}`.
#[derive(Clone, Debug)]
pub struct MarkovMatrix {
    kernel: SparseMatrix,
    transition: SparseMatrix,
    row_sums: Vec<f64>,
    normalizer: Vec<f64>,
}

pub fn markov_normalize(kernel: &SparseMatrix) -> Result<MarkovMatrix> {
    let q = kernel.row_sums();
    if let Some(i) = q.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::IsolatedPoint(i));
    }
    let inv_sqrt_q: Vec<f64> = q.iter().map(|v| 1.0 / v.sqrt()).collect();
    let normalizer = kernel.mul_vec(&inv_sqrt_q);
    let transition = kernel.map_values(|i, j, k| k / (normalizer[i] * q[j].sqrt()));
    Ok(MarkovMatrix {
        kernel: kernel.clone(),
        transition,
        row_sums: q,
        normalizer,
    })
}

impl MarkovMatrix {
    pub fn dim(&self) -> usize {
        self.transition.dim()
    }

    pub fn transition(&self) -> &SparseMatrix {
        &self.transition
    }

    pub fn kernel(&self) -> &SparseMatrix {
        &self.kernel
    }

    /// Kernel row sums `q`.
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    /// `D_i = Σ_k K_ik q_k^{-1/2}`.
    pub fn normalizer(&self) -> &[f64] {
        &self.normalizer
    }

    /// Diagonal `M = D^{-1/2} q^{-1/4}` with `P = M^{-1} (M K M) M`.
    pub fn conjugation(&self) -> Vec<f64> {
        self.normalizer
            .iter()
            .zip(&self.row_sums)
            .map(|(d, q)| 1.0 / (d.sqrt() * q.sqrt().sqrt()))
            .collect()
    }

    /// Dense symmetric conjugate `M K M`, similar to `P`.
    pub fn symmetric_conjugate(&self) -> Mat<f64> {
        let m = self.conjugation();
        let mut s = Mat::zeros(self.dim(), self.dim());
        for (i, j, k) in self.kernel.triplets() {
            s[(i, j)] = m[i] * k * m[j];
        }
        s
    }

    /// Stationary measure of `P`, proportional to `D_i q_i^{-1/2}`, summing to one.
    pub fn stationary_measure(&self) -> Vec<f64> {
        let raw: Vec<f64> = self
            .normalizer
            .iter()
            .zip(&self.row_sums)
            .map(|(d, q)| d / q.sqrt())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    pub fn write_triplets(&self, writer: impl Write) -> Result<()> {
        write_triplets(writer, self.transition.triplets())
    }
}

/// Full graph-to-Markov chain for a panel.
pub fn markov_from_panel(panel: &LoadPanel, config: &DelayConfig) -> Result<(DelayGraph, MarkovMatrix)> {
    config.validate(panel.n_samples())?;
    let table = pairwise_delay_distances(panel, config.delays)?;
    let graph = build_graph(&table, config)?;
    let kernel = kernel_matrix(&graph)?;
    let markov = markov_normalize(&kernel)?;
    Ok((graph, markov))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(cols: &[&[f64]]) -> LoadPanel {
        let ids = (0..cols.len()).map(|j| format!("s{j}")).collect();
        LoadPanel::from_fn(cols[0].len(), ids, 3600.0, 0.0, |i, j| cols[j][i]).unwrap()
    }

    fn table(points: &[f64]) -> DistanceTable {
        DistanceTable::from_points(Mat::from_fn(points.len(), 1, |i, _| points[i]).as_ref())
    }

    #[test]
    fn embedding_counts() {
        let p = LoadPanel::from_fn(5, vec!["a".into(), "b".into()], 1.0, 0.0, |i, j| (10 * i + j) as f64)
            .unwrap();
        let e = delay_embed(&p, 3).unwrap();
        assert_eq!((e.nrows(), e.ncols()), (3, 6));
        // point 0 is (x_2, x_1, x_0)
        let row0: Vec<f64> = e.row(0).iter().copied().collect();
        assert_eq!(row0, vec![20.0, 21.0, 10.0, 11.0, 0.0, 1.0]);
        let id = delay_embed(&p, 1).unwrap();
        assert_eq!(id.nrows(), 5);
        assert!(matches!(delay_embed(&p, 5), Err(Error::Config(_))));
    }

    #[test]
    fn hand_evaluated_delay_distance() {
        let p = series(&[&[0.0, 1.0, 2.0, 3.0]]);
        let t = pairwise_delay_distances(&p, 2).unwrap();
        // embedded points 1 and 2 sit at physical times 2 and 3
        assert_eq!(t.get(1, 2), 1.0);
        assert_eq!(t.get(2, 1), 1.0);
        assert_eq!(t.get(0, 0), 0.0);
    }

    #[test]
    fn constant_panel_has_zero_distances() {
        let p = series(&[&[4.0; 12], &[1.5; 12]]);
        let t = pairwise_delay_distances(&p, 4).unwrap();
        assert!((0..t.len()).all(|i| t.row(i).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn sliding_windows_match_embedded_vectors() {
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|j| (0..40).map(|i| ((i * (j + 3)) as f64 * 0.37).sin() + j as f64).collect())
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let p = series(&refs);
        let q = 7;
        let fast = pairwise_delay_distances(&p, q).unwrap();
        let slow = DistanceTable::from_points(delay_embed(&p, q).unwrap().as_ref());
        for i in 0..fast.len() {
            for j in 0..fast.len() {
                assert!((fast.get(i, j) - slow.get(i, j) / q as f64).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn collinear_union_symmetrization() {
        let g = build_graph(&table(&[0.0, 1.0, 3.0]), &DelayConfig::new(1, 1)).unwrap();
        let nb = |i: usize| g.neighbors(i).map(|(j, _)| j).collect::<Vec<_>>();
        assert_eq!(nb(0), vec![0, 1]);
        assert_eq!(nb(1), vec![0, 1, 2]);
        assert_eq!(nb(2), vec![1, 2]);
    }

    #[test]
    fn full_knn_is_dense() {
        let g = build_graph(&table(&[0.0, 1.0, 3.0, 7.0]), &DelayConfig::new(1, 3)).unwrap();
        assert_eq!(g.distances().nnz(), 16);
    }

    #[test]
    fn duplicates_always_retained() {
        let g = build_graph(&table(&[0.0, 5.0, 5.0, 9.0, 20.0]), &DelayConfig::new(1, 1)).unwrap();
        assert!(g.neighbors(1).any(|(j, d)| j == 2 && d == 0.0));
        assert!(g.density().iter().all(|&r| r > 0.0 && r.is_finite()));
    }

    #[test]
    fn knn_too_large_is_config_error() {
        assert!(matches!(
            build_graph(&table(&[0.0, 1.0, 2.0]), &DelayConfig::new(1, 3)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fixed_kernel_unit_exponent() {
        let mut cfg = DelayConfig::new(1, 1);
        cfg.bandwidth_mode = BandwidthMode::Fixed;
        let g = build_graph(&table(&[0.0, 1.0, 3.0]), &cfg).unwrap();
        let k = kernel_matrix(&g).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        let eps = g.epsilon();
        assert!((k.get(0, 1) - (-1.0 / eps).exp()).abs() < 1e-15);
        // d² = ε₀ gives e⁻¹
        let d2 = g.distances().get(0, 1);
        assert!(((-d2 / d2).exp() - (-1.0f64).exp()).abs() < 1e-15);

        cfg.epsilon_scale = 2.0;
        let g2 = build_graph(&table(&[0.0, 1.0, 3.0]), &cfg).unwrap();
        assert!(kernel_matrix(&g2).unwrap().get(0, 1) > k.get(0, 1));
    }

    #[test]
    fn markov_of_identity_and_ones() {
        let id = SparseMatrix::from_rows(vec![vec![(0, 1.0)], vec![(1, 1.0)]]);
        let m = markov_normalize(&id).unwrap();
        assert_eq!(m.row_sums(), [1.0, 1.0]);
        assert_eq!(m.transition().to_dense(), Mat::<f64>::identity(2, 2));

        let ones = SparseMatrix::from_rows(vec![vec![(0, 1.0), (1, 1.0)]; 2]);
        let m = markov_normalize(&ones).unwrap();
        assert_eq!(m.row_sums(), [2.0, 2.0]);
        for (_, _, v) in m.transition().triplets() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_row_is_isolated_point() {
        let k = SparseMatrix::from_rows(vec![vec![(0, 1.0)], vec![(1, 0.0)]]);
        assert!(matches!(markov_normalize(&k), Err(Error::IsolatedPoint(1))));
    }

    #[test]
    fn bandwidth_grid_is_sane() {
        let eps = tune_bandwidth(&[0.0, 1.0, 1.0, 0.0]);
        assert!(eps > 0.0 && eps.is_finite());
        let (lo, hi) = BANDWIDTH_EXPONENT_RANGE;
        assert!(eps >= lo.exp2() && eps <= hi.exp2());
    }
}
