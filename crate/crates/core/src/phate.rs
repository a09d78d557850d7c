//! Diffusion-potential embedding and k-means clustering of stations.
//!
//! Stations are points in `R^N` (their normalized time series). The station
//! kernel reuses the delay-graph machinery with a single delay.

use std::io::Write;

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::artifact::{format_f64, write_table};
use crate::data::{minmax_normalize, LoadPanel};
use crate::embedding::{
    build_graph, kernel_matrix, markov_normalize, BandwidthMode, DelayConfig, DelayGraph, DistanceTable,
    MarkovMatrix,
};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;

/// Entries of `P^t` below this are floored before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-300;
pub const MDS_MAX_ITER: usize = 500;
pub const MDS_TOLERANCE: f64 = 1e-8;
pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_RESTARTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhateConfig {
    pub knn: usize,
    pub bandwidth_mode: BandwidthMode,
    pub alpha: f64,
    pub epsilon_scale: f64,
    /// Embedding dimension.
    pub dims: usize,
    /// Number of clusters.
    pub clusters: usize,
    pub t_max: usize,
    /// Knee threshold as a fraction of the first entropy drop.
    pub knee_fraction: f64,
    pub mds_seed: u64,
    pub kmeans_seed: u64,
}

impl Default for PhateConfig {
    fn default() -> Self {
        Self {
            knn: 5,
            bandwidth_mode: BandwidthMode::Variable,
            alpha: 0.5,
            epsilon_scale: 1.0,
            dims: 3,
            clusters: 10,
            t_max: 100,
            knee_fraction: 0.05,
            mds_seed: 0,
            kmeans_seed: 0,
        }
    }
}

/// Markov matrix over stations.
#[derive(Clone, Debug)]
pub struct StationGraph {
    pub graph: DelayGraph,
    pub markov: MarkovMatrix,
}

/// Station kernel from per-station min-max normalized series.
///
/// `knn` is capped at `d − 1`.
pub fn station_graph(panel: &LoadPanel, config: &PhateConfig) -> Result<StationGraph> {
    let d = panel.n_stations();
    if d < 2 {
        return Err(Error::InsufficientData { needed: 2, found: d });
    }
    let (normalized, _) = minmax_normalize(panel);
    let points = normalized.values().transpose().to_owned();
    let table = DistanceTable::from_points(points.as_ref());
    let delay = DelayConfig {
        delays: 1,
        knn: config.knn.clamp(1, d - 1),
        bandwidth_mode: config.bandwidth_mode,
        alpha: config.alpha,
        epsilon_scale: config.epsilon_scale,
    };
    let graph = build_graph(&table, &delay)?;
    let markov = markov_normalize(&kernel_matrix(&graph)?)?;
    Ok(StationGraph { graph, markov })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionTime {
    pub t: usize,
    /// `H(1), ..., H(t_max)`.
    pub entropy: Vec<f64>,
    /// Set when every eigenvalue but the first is negligible.
    pub degenerate: bool,
}

/// Von Neumann entropy `H(t)` of the positive spectrum of the symmetric conjugate.
pub fn entropy_curve(eigenvalues: &[f64], t_max: usize) -> Vec<f64> {
    let positive: Vec<f64> = eigenvalues.iter().copied().filter(|&l| l > 0.0).collect();
    (1..=t_max)
        .map(|t| {
            let powers: Vec<f64> = positive.iter().map(|l| l.powi(t as i32)).collect();
            let total: f64 = powers.iter().sum();
            if total <= 0.0 {
                return 0.0;
            }
            -powers
                .iter()
                .map(|p| p / total)
                .filter(|&p| p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>()
        })
        .collect()
}

/// Smallest `t ≥ 2` with `H(t−1) − H(t) < fraction · (H(1) − H(2))`; 1 for a
/// flat curve, `t_max` if the drop never falls below the threshold.
pub fn knee(entropy: &[f64], fraction: f64) -> usize {
    if entropy.len() < 2 {
        return 1;
    }
    let first = entropy[0] - entropy[1];
    if !(first > 0.0) {
        return 1;
    }
    (2..=entropy.len())
        .find(|&t| entropy[t - 2] - entropy[t - 1] < fraction * first)
        .unwrap_or(entropy.len())
}

pub fn select_diffusion_time(markov: &MarkovMatrix, t_max: usize, fraction: f64) -> Result<DiffusionTime> {
    if t_max == 0 {
        return Err(Error::Config("t_max must be positive".into()));
    }
    let (mut eig, _) = sym_eigen(markov.symmetric_conjugate().as_ref())?;
    eig.reverse();
    let degenerate = eig.iter().skip(1).all(|&l| l < 1e-12);
    let entropy = entropy_curve(&eig, t_max);
    let t = if degenerate { 1 } else { knee(&entropy, fraction) };
    Ok(DiffusionTime { t, entropy, degenerate })
}

/// Dense `P^t` by repeated squaring.
pub fn matrix_power(p: MatRef<'_, f64>, t: usize) -> Mat<f64> {
    let mut result = Mat::<f64>::identity(p.nrows(), p.ncols());
    let mut base = p.to_owned();
    let mut e = t;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

/// `Γ_ij = ‖U_i − U_j‖` with `U = −log(max(P^t, floor))` row-wise.
pub fn potential_distances(markov: &MarkovMatrix, t: usize) -> Result<Mat<f64>> {
    if t == 0 {
        return Err(Error::Config("diffusion time must be at least 1".into()));
    }
    let powered = matrix_power(markov.transition().to_dense().as_ref(), t);
    let n = powered.nrows();
    let potential = Mat::from_fn(n, n, |i, j| -powered[(i, j)].max(LOG_FLOOR).ln());
    let mut gamma = Mat::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (0..n)
                .map(|c| (potential[(i, c)] - potential[(j, c)]).powi(2))
                .sum::<f64>()
                .sqrt();
            gamma[(i, j)] = v;
            gamma[(j, i)] = v;
        }
    }
    Ok(gamma)
}

#[derive(Clone, Debug)]
pub struct MdsResult {
    /// `n x m`.
    pub coordinates: Mat<f64>,
    pub stress: f64,
    /// Stress of the initialization followed by every accepted iterate.
    pub stress_history: Vec<f64>,
}

fn pairwise(x: MatRef<'_, f64>) -> Mat<f64> {
    let n = x.nrows();
    Mat::from_fn(n, n, |i, j| {
        (0..x.ncols())
            .map(|c| (x[(i, c)] - x[(j, c)]).powi(2))
            .sum::<f64>()
            .sqrt()
    })
}

/// Normalized stress of a configuration against target distances.
pub fn stress(gamma: MatRef<'_, f64>, x: MatRef<'_, f64>) -> f64 {
    let dist = pairwise(x);
    let n = gamma.nrows();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            num += (gamma[(i, j)] - dist[(i, j)]).powi(2);
            den += gamma[(i, j)].powi(2);
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

/// Classical (Torgerson) scaling, signs fixed so each column's largest entry is positive.
pub fn classical_mds(gamma: MatRef<'_, f64>, m: usize) -> Result<Mat<f64>> {
    let n = gamma.nrows();
    let sq = Mat::from_fn(n, n, |i, j| gamma[(i, j)].powi(2));
    let row_mean: Vec<f64> = (0..n).map(|i| (0..n).map(|j| sq[(i, j)]).sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let b = Mat::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + grand));
    let (vals, vecs) = sym_eigen(b.as_ref())?;
    let mut x = Mat::zeros(n, m);
    for c in 0..m.min(n) {
        let src = n - 1 - c;
        let scale = vals[src].max(0.0).sqrt();
        let mut peak = (0.0f64, 1.0f64);
        for i in 0..n {
            let v = vecs[(i, src)];
            if v.abs() > peak.0 + 1e-12 {
                peak = (v.abs(), v.signum());
            }
        }
        for i in 0..n {
            x[(i, c)] = peak.1 * vecs[(i, src)] * scale;
        }
    }
    Ok(x)
}

fn guttman(gamma: MatRef<'_, f64>, x: MatRef<'_, f64>) -> Mat<f64> {
    let n = x.nrows();
    let dist = pairwise(x);
    let mut b = Mat::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j && dist[(i, j)] > 0.0 {
                let v = -gamma[(i, j)] / dist[(i, j)];
                b[(i, j)] = v;
                diag -= v;
            }
        }
        b[(i, i)] = diag;
    }
    let mut out = &b * x;
    out.col_iter_mut().for_each(|c| c.iter_mut().for_each(|v| *v /= n as f64));
    out
}

/// Metric MDS by stress majorization from a classical-scaling start.
///
/// Stops when the relative stress improvement falls below the tolerance or
/// after [`MDS_MAX_ITER`] iterations. An iterate that would raise the stress
/// is never accepted. The seed only matters when the classical start is
/// degenerate and gets a small random perturbation.
pub fn metric_mds(gamma: MatRef<'_, f64>, m: usize, seed: u64) -> Result<MdsResult> {
    let n = gamma.nrows();
    if m == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    if gamma.ncols() != n {
        return Err(Error::Config("distance table must be square".into()));
    }
    for i in 0..n {
        if gamma[(i, i)] != 0.0 {
            return Err(Error::Config(format!("distance table has nonzero diagonal at {i}")));
        }
        for j in 0..i {
            if (gamma[(i, j)] - gamma[(j, i)]).abs() > 1e-12 * gamma[(i, j)].abs().max(1.0) {
                return Err(Error::Config(format!("distance table asymmetric at ({i}, {j})")));
            }
        }
    }
    let scale = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| gamma[(i, j)].abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(MdsResult {
            coordinates: Mat::zeros(n, m),
            stress: 0.0,
            stress_history: vec![0.0],
        });
    }
    let mut x = classical_mds(gamma, m)?;
    let spread = pairwise(x.as_ref());
    let collapsed = (0..n).any(|i| (0..n).any(|j| i != j && spread[(i, j)] == 0.0 && gamma[(i, j)] > 0.0));
    if collapsed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in 0..m {
            for i in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                x[(i, c)] += 1e-3 * scale * z;
            }
        }
    }
    let mut current = stress(gamma, x.as_ref());
    let mut history = vec![current];
    for _ in 0..MDS_MAX_ITER {
        let next = guttman(gamma, x.as_ref());
        let s = stress(gamma, next.as_ref());
        if !(s <= current) {
            break;
        }
        let improvement = current - s;
        x = next;
        history.push(s);
        let done = improvement <= MDS_TOLERANCE * current;
        current = s;
        if done {
            break;
        }
    }
    Ok(MdsResult {
        coordinates: x,
        stress: current,
        stress_history: history,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Mat<f64>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
}

fn sq_dist(x: MatRef<'_, f64>, i: usize, c: MatRef<'_, f64>, k: usize) -> f64 {
    (0..x.ncols()).map(|j| (x[(i, j)] - c[(k, j)]).powi(2)).sum()
}

fn plus_plus(x: MatRef<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let d2: Vec<f64> = (0..n)
            .map(|i| {
                chosen
                    .iter()
                    .map(|&c| (0..x.ncols()).map(|j| (x[(i, j)] - x[(c, j)]).powi(2)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
    }
    Mat::from_fn(k, x.ncols(), |c, j| x[(chosen[c], j)])
}

fn lloyd(x: MatRef<'_, f64>, mut centroids: Mat<f64>) -> KMeansResult {
    let (n, k) = (x.nrows(), centroids.nrows());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(x, i, centroids.as_ref(), a).total_cmp(&sq_dist(x, i, centroids.as_ref(), b)))
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        // an empty cluster takes the point farthest from its centroid
        for c in 0..k {
            if !labels.contains(&c) {
                let far = (0..n)
                    .filter(|&i| labels.iter().filter(|&&l| l == labels[i]).count() > 1)
                    .max_by(|&a, &b| {
                        sq_dist(x, a, centroids.as_ref(), labels[a])
                            .total_cmp(&sq_dist(x, b, centroids.as_ref(), labels[b]))
                    });
                if let Some(i) = far {
                    labels[i] = c;
                    changed = true;
                }
            }
        }
        let mut sums = Mat::<f64>::zeros(k, x.ncols());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..x.ncols() {
                sums[(labels[i], j)] += x[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..x.ncols() {
                    centroids[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let wcss = (0..n).map(|i| sq_dist(x, i, centroids.as_ref(), labels[i])).sum();
    KMeansResult {
        labels,
        centroids,
        wcss,
    }
}

/// k-means++ seeding and Lloyd iterations, best of [`KMEANS_RESTARTS`] runs.
pub fn kmeans(points: MatRef<'_, f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("need 1 <= k <= {n} points, got k = {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Clone, Debug)]
pub struct PhateEmbedding {
    pub station_ids: Vec<String>,
    /// `d x m`.
    pub coordinates: Mat<f64>,
    pub diffusion_time: DiffusionTime,
    pub stress: f64,
    pub stress_history: Vec<f64>,
    pub labels: Vec<usize>,
    pub clusters: usize,
    pub knn_used: usize,
    pub mds_seed: u64,
    pub kmeans_seed: u64,
}

/// Station graph, diffusion time, potential distances, MDS and k-means.
pub fn phate(panel: &LoadPanel, config: &PhateConfig) -> Result<PhateEmbedding> {
    let d = panel.n_stations();
    if config.clusters == 0 || config.clusters > d {
        return Err(Error::Config(format!(
            "cluster count must satisfy 1 <= k <= d = {d}, got {}",
            config.clusters
        )));
    }
    let sg = station_graph(panel, config)?;
    let diffusion_time = select_diffusion_time(&sg.markov, config.t_max, config.knee_fraction)?;
    let gamma = potential_distances(&sg.markov, diffusion_time.t)?;
    let mds = metric_mds(gamma.as_ref(), config.dims, config.mds_seed)?;
    let clusters = kmeans(mds.coordinates.as_ref(), config.clusters, config.kmeans_seed)?;
    Ok(PhateEmbedding {
        station_ids: panel.station_ids().to_vec(),
        coordinates: mds.coordinates,
        diffusion_time,
        stress: mds.stress,
        stress_history: mds.stress_history,
        labels: clusters.labels,
        clusters: config.clusters,
        knn_used: sg.graph.config().knn,
        mds_seed: config.mds_seed,
        kmeans_seed: config.kmeans_seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhateMeta {
    pub diffusion_time: usize,
    pub entropy_degenerate: bool,
    pub stress: f64,
    pub clusters: usize,
    pub knn: usize,
    pub mds_seed: u64,
    pub kmeans_seed: u64,
}

impl PhateEmbedding {
    pub fn meta(&self) -> PhateMeta {
        PhateMeta {
            diffusion_time: self.diffusion_time.t,
            entropy_degenerate: self.diffusion_time.degenerate,
            stress: self.stress,
            clusters: self.clusters,
            knn: self.knn_used,
            mds_seed: self.mds_seed,
            kmeans_seed: self.kmeans_seed,
        }
    }

    /// Station indices of each cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// `station_id, z1..zm, cluster`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let m = self.coordinates.ncols();
        let names: Vec<String> = (1..=m).map(|c| format!("z{c}")).collect();
        let mut header = vec!["station_id"];
        header.extend(names.iter().map(String::as_str));
        header.push("cluster");
        let rows = (0..self.station_ids.len()).map(|i| {
            let mut row = vec![self.station_ids[i].clone()];
            row.extend((0..m).map(|c| format_f64(self.coordinates[(i, c)])));
            row.push(self.labels[i].to_string());
            row
        });
        write_table(writer, &header, rows)
    }
}
