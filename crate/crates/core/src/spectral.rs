//! Kernel eigenfunctions, the regularized Galerkin problem for the Koopman
//! generator, and out-of-sample (Nystrom) extension.

use std::f64::consts::TAU;
use std::io::Write;

use faer::linalg::solvers::GeneralizedEigen;
use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::artifact::{format_f64, write_table};
use crate::embedding::{delay_embed, density_factor, neighbor_stats, DelayGraph, MarkovMatrix};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::C64;

/// Largest acceptable relative eigen-residual.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Kernel eigenvalues at or below this magnitude cannot be extended.
pub const NYSTROM_MIN_EIGENVALUE: f64 = 1e-10;

/// Leading eigenpairs of the Markov matrix, orthonormal under its stationary measure.
#[derive(Clone, Debug)]
pub struct KernelEigenbasis {
    eigenvalues: Vec<f64>,
    functions: Mat<f64>,
    laplacian: Vec<f64>,
    measure: Vec<f64>,
    epsilon: f64,
    residuals: Vec<f64>,
}

/// Top-`l` eigenpairs of `P` through its symmetric conjugate.
///
/// `epsilon` is the global kernel bandwidth used to turn eigenvalues into
/// Laplace-Beltrami proxies `η = (1/λ − 1)/ε`.
pub fn kernel_eigs(markov: &MarkovMatrix, l: usize, epsilon: f64) -> Result<KernelEigenbasis> {
    let n = markov.dim();
    if l == 0 || l > n {
        return Err(Error::Config(format!("need 1 <= l <= N_e = {n}, got l = {l}")));
    }
    let (values, vectors) = sym_eigen(markov.symmetric_conjugate().as_ref())?;
    let measure = markov.stationary_measure();
    // φ = u / sqrt(μ) up to a global constant, making φ orthonormal under μ
    let scale: Vec<f64> = measure.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut eigenvalues = Vec::with_capacity(l);
    let mut functions = Mat::zeros(n, l);
    for k in 0..l {
        let src = n - 1 - k;
        eigenvalues.push(values[src]);
        let mut peak = (0.0f64, 1.0f64);
        for i in 0..n {
            let v = vectors[(i, src)] * scale[i];
            functions[(i, k)] = v;
            if v.abs() > peak.0 {
                peak = (v.abs(), v.signum());
            }
        }
        for i in 0..n {
            functions[(i, k)] *= peak.1;
        }
    }

    let p = markov.transition();
    let residuals: Vec<f64> = (0..l)
        .map(|k| {
            let col: Vec<f64> = functions.col(k).iter().copied().collect();
            let pcol = p.mul_vec(&col);
            let num: f64 = pcol
                .iter()
                .zip(&col)
                .zip(&measure)
                .map(|((a, b), m)| m * (a - eigenvalues[k] * b).powi(2))
                .sum();
            num.sqrt()
        })
        .collect();
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    if !(max_residual <= RESIDUAL_TOLERANCE) {
        return Err(Error::Solver {
            message: "kernel eigenpairs failed the residual check".into(),
            max_residual,
            residuals,
        });
    }
    let laplacian = eigenvalues.iter().map(|&lam| (1.0 / lam - 1.0) / epsilon).collect();
    Ok(KernelEigenbasis {
        eigenvalues,
        functions,
        laplacian,
        measure,
        epsilon,
        residuals,
    })
}

impl KernelEigenbasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.functions.nrows()
    }

    /// Eigenvalues in nonincreasing order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `N_e x l`; column `j` samples `φ_j` at the embedded points.
    pub fn functions(&self) -> MatRef<'_, f64> {
        self.functions.as_ref()
    }

    /// `η_j = (1/λ_j − 1)/ε`.
    pub fn laplacian(&self) -> &[f64] {
        &self.laplacian
    }

    /// Weights of the inner product, summing to one.
    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// `⟨f, g⟩ = Σ_n μ_n f_n g_n`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.measure
            .iter()
            .zip(f.iter().zip(g))
            .map(|(m, (a, b))| m * a * b)
            .sum()
    }

    pub fn gram(&self) -> Mat<f64> {
        let l = self.len();
        let cols: Vec<Vec<f64>> = (0..l)
            .map(|k| self.functions.col(k).iter().copied().collect())
            .collect();
        Mat::from_fn(l, l, |i, j| self.inner(&cols[i], &cols[j]))
    }

    /// Unit leading eigenvalue with a constant eigenfunction, separated from λ₂.
    pub fn check_invariants(&self) -> Result<()> {
        let lam1 = self.eigenvalues[0];
        if (lam1 - 1.0).abs() > 1e-8 {
            return Err(Error::DegenerateSpectrum(format!(
                "leading kernel eigenvalue {lam1} differs from 1"
            )));
        }
        if self.len() > 1 && self.eigenvalues[1] >= 1.0 - 1e-12 {
            return Err(Error::DegenerateSpectrum(format!(
                "repeated unit eigenvalue (λ₂ = {})",
                self.eigenvalues[1]
            )));
        }
        let col = self.functions.col(0);
        let mean = col.iter().sum::<f64>() / col.nrows() as f64;
        let dev = col.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        if dev > 1e-6 * mean.abs() {
            return Err(Error::DegenerateSpectrum(format!(
                "leading eigenfunction deviates from constant by {dev:e}"
            )));
        }
        Ok(())
    }
}

/// Generator applied to each column by finite differences in time.
///
/// Interior samples use central differences; the end samples use one-sided
/// second-order stencils. `tau` is the sampling interval in seconds.
pub fn generator_action(functions: MatRef<'_, f64>, tau: f64) -> Result<Mat<f64>> {
    let n = functions.nrows();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, found: n });
    }
    let h = 2.0 * tau;
    Ok(Mat::from_fn(n, functions.ncols(), |i, j| {
        let f = |k: usize| functions[(k, j)];
        if i == 0 {
            (-3.0 * f(0) + 4.0 * f(1) - f(2)) / h
        } else if i == n - 1 {
            (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / h
        } else {
            (f(i + 1) - f(i - 1)) / h
        }
    }))
}

/// The `l x l` Galerkin pair. Index 0 is the constant mode, decoupled with
/// `A[0][*] = A[*][0] = 0` and `B[0][0] = 1`.
#[derive(Clone, Debug)]
pub struct GalerkinMatrices {
    pub a: Mat<f64>,
    pub b: Mat<f64>,
    pub theta: f64,
}

/// `A_ij = ⟨φ_i, V φ_j⟩/η_j − θ ⟨φ_i, φ_j⟩` and `B_ij = ⟨φ_i, φ_j⟩/η_j` for `i, j ≥ 1`.
pub fn galerkin_matrices(
    basis: &KernelEigenbasis,
    generator: MatRef<'_, f64>,
    theta: f64,
) -> Result<GalerkinMatrices> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::Config(format!("theta must be nonnegative, got {theta}")));
    }
    let l = basis.len();
    let eta = basis.laplacian();
    if let Some(j) = (1..l).find(|&j| !(eta[j] > 0.0 && eta[j].is_finite())) {
        return Err(Error::DegenerateSpectrum(format!(
            "η_{j} = {} (λ = {}) is not positive",
            eta[j],
            basis.eigenvalues()[j]
        )));
    }
    let phi = basis.functions();
    let weighted = Mat::from_fn(phi.nrows(), l, |n, i| basis.measure[n] * phi[(n, i)]);
    let proj_v = weighted.transpose() * generator;
    let gram = weighted.transpose() * phi;
    let mut a = Mat::zeros(l, l);
    let mut b = Mat::zeros(l, l);
    b[(0, 0)] = 1.0;
    for i in 1..l {
        for j in 1..l {
            a[(i, j)] = proj_v[(i, j)] / eta[j] - theta * gram[(i, j)];
            b[(i, j)] = gram[(i, j)] / eta[j];
        }
    }
    Ok(GalerkinMatrices { a, b, theta })
}

/// Approximate Koopman eigenfunctions ordered by Dirichlet energy.
#[derive(Clone, Debug)]
pub struct KoopmanBasis {
    eigenvalues: Vec<C64>,
    functions: Vec<Vec<C64>>,
    energies: Vec<f64>,
    coefficients: Vec<Vec<C64>>,
    partner: Vec<usize>,
    measure: Vec<f64>,
    sample_interval: f64,
}

struct ModeCandidate {
    gamma: C64,
    coefficients: Vec<C64>,
    function: Vec<C64>,
    energy: f64,
}

/// Solves `A ĉ = γ B ĉ`, forms `ψ = Σ_j c_j φ_j` with `c = ĉ/η`, orders by
/// Dirichlet energy and keeps `l_prime` modes.
///
/// Conjugate partners are built exactly from the member with positive
/// frequency. When the cut at `l_prime` would split a pair, the dangling
/// member is dropped, so the result may hold `l_prime − 1` modes.
pub fn galerkin_solve(
    matrices: &GalerkinMatrices,
    basis: &KernelEigenbasis,
    sample_interval: f64,
    l_prime: usize,
) -> Result<KoopmanBasis> {
    let l = basis.len();
    if l_prime == 0 || l_prime > l {
        return Err(Error::Config(format!("need 1 <= l' <= l = {l}, got {l_prime}")));
    }
    let phi = basis.functions();
    let eta = basis.laplacian();
    let n = basis.n_points();
    let m = l - 1;

    let mut candidates = Vec::new();
    if m > 0 {
        let a = matrices.a.submatrix(1, 1, m, m);
        let b = matrices.b.submatrix(1, 1, m, m);
        let bdiag: Vec<f64> = (0..m).map(|i| b[(i, i)].abs()).collect();
        let bmax = bdiag.iter().copied().fold(0.0, f64::max);
        let bmin = bdiag.iter().copied().fold(f64::INFINITY, f64::min);
        if !(bmin > bmax * 1e-15) {
            return Err(Error::Solver {
                message: format!("B is numerically singular (diagonal range {bmin:e}..{bmax:e})"),
                max_residual: f64::NAN,
                residuals: Vec::new(),
            });
        }
        let gevd = GeneralizedEigen::new_from_real(a, b).map_err(|e| Error::Solver {
            message: format!("QZ iteration failed: {e:?}"),
            max_residual: f64::NAN,
            residuals: Vec::new(),
        })?;
        let (sa, sb, u) = (gevd.S_a(), gevd.S_b(), gevd.U());
        let sa: Vec<C64> = sa.column_vector().iter().copied().collect();
        let sb: Vec<C64> = sb.column_vector().iter().copied().collect();
        let anorm = a.norm_l2();
        let bnorm = b.norm_l2();
        let mut residuals = Vec::new();
        for k in 0..m {
            if sb[k].norm() <= f64::EPSILON * bnorm {
                continue;
            }
            let gamma = sa[k] / sb[k];
            if !(gamma.re.is_finite() && gamma.im.is_finite()) || gamma.im < 0.0 {
                continue;
            }
            let c_hat: Vec<C64> = (0..m).map(|i| u[(i, k)]).collect();
            let residual = gevd_residual(a, b, &c_hat, gamma) / ((anorm + gamma.norm() * bnorm) * norm(&c_hat));
            residuals.push(residual);
            let mut coefficients = vec![C64::new(0.0, 0.0); l];
            for i in 0..m {
                coefficients[i + 1] = c_hat[i] / eta[i + 1];
            }
            let mut function = vec![C64::new(0.0, 0.0); n];
            for (j, c) in coefficients.iter().enumerate().skip(1) {
                for (t, f) in function.iter_mut().enumerate() {
                    *f += c * phi[(t, j)];
                }
            }
            let weight: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum();
            let energy = coefficients
                .iter()
                .zip(eta)
                .map(|(c, e)| c.norm_sqr() * e)
                .sum::<f64>()
                / weight;
            // unit norm, largest-modulus entry real positive
            let fnorm = basis
                .measure
                .iter()
                .zip(&function)
                .map(|(w, f)| w * f.norm_sqr())
                .sum::<f64>()
                .sqrt();
            let peak = function
                .iter()
                .copied()
                .fold(C64::new(0.0, 0.0), |best, f| if f.norm() > best.norm() { f } else { best });
            let rot = peak.conj() / (peak.norm() * fnorm);
            function.iter_mut().for_each(|f| *f *= rot);
            coefficients.iter_mut().for_each(|c| *c *= rot);
            if gamma.im == 0.0 {
                // a real eigenvalue has a real eigenvector up to phase
                function.iter_mut().for_each(|f| f.im = 0.0);
                coefficients.iter_mut().for_each(|c| c.im = 0.0);
            }
            candidates.push(ModeCandidate {
                gamma,
                coefficients,
                function,
                energy,
            });
        }
        let max_residual = residuals.iter().copied().fold(0.0, f64::max);
        if !(max_residual <= RESIDUAL_TOLERANCE) {
            return Err(Error::Solver {
                message: "Galerkin eigenpairs failed the residual check".into(),
                max_residual,
                residuals,
            });
        }
    }
    candidates.sort_by(|x, y| {
        x.energy
            .total_cmp(&y.energy)
            .then(y.gamma.im.total_cmp(&x.gamma.im))
    });

    let available = 1 + candidates
        .iter()
        .map(|c| if c.gamma.im > 0.0 { 2 } else { 1 })
        .sum::<usize>();
    if available < l_prime {
        return Err(Error::Truncation {
            requested: l_prime,
            available,
        });
    }

    let mut out = KoopmanBasis {
        eigenvalues: vec![C64::new(0.0, 0.0)],
        functions: vec![vec![C64::new(1.0, 0.0); n]],
        energies: vec![0.0],
        coefficients: vec![{
            let mut c = vec![C64::new(0.0, 0.0); l];
            c[0] = C64::new(1.0, 0.0);
            c
        }],
        partner: vec![0],
        measure: basis.measure.clone(),
        sample_interval,
    };
    for cand in candidates {
        let k = out.len();
        if cand.gamma.im > 0.0 {
            if k + 2 > l_prime {
                break;
            }
            out.push(cand.gamma, cand.function.clone(), cand.energy, cand.coefficients.clone(), k + 1);
            out.push(
                cand.gamma.conj(),
                cand.function.iter().map(|f| f.conj()).collect(),
                cand.energy,
                cand.coefficients.iter().map(|c| c.conj()).collect(),
                k,
            );
        } else {
            if k + 1 > l_prime {
                break;
            }
            out.push(cand.gamma, cand.function, cand.energy, cand.coefficients, k);
        }
    }
    Ok(out)
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn gevd_residual(a: MatRef<'_, f64>, b: MatRef<'_, f64>, c: &[C64], gamma: C64) -> f64 {
    let m = c.len();
    (0..m)
        .map(|i| {
            let mut r = C64::new(0.0, 0.0);
            for j in 0..m {
                r += c[j] * (a[(i, j)] - gamma * b[(i, j)]);
            }
            r.norm_sqr()
        })
        .sum::<f64>()
        .sqrt()
}

impl KoopmanBasis {
    fn push(&mut self, gamma: C64, function: Vec<C64>, energy: f64, coefficients: Vec<C64>, partner: usize) {
        self.eigenvalues.push(gamma);
        self.functions.push(function);
        self.energies.push(energy);
        self.coefficients.push(coefficients);
        self.partner.push(partner);
    }

    /// Assembles a basis from explicit parts; `partner[k]` is the index of the
    /// conjugate of mode `k` (itself for real modes).
    pub fn from_parts(
        eigenvalues: Vec<C64>,
        functions: Vec<Vec<C64>>,
        energies: Vec<f64>,
        partner: Vec<usize>,
        measure: Vec<f64>,
        sample_interval: f64,
    ) -> Result<Self> {
        let k = eigenvalues.len();
        if functions.len() != k || energies.len() != k || partner.len() != k {
            return Err(Error::Alignment("mode field lengths differ".into()));
        }
        if functions.iter().any(|f| f.len() != measure.len()) {
            return Err(Error::Alignment("eigenfunction length differs from measure".into()));
        }
        if partner.iter().enumerate().any(|(i, &p)| p >= k || partner[p] != i) {
            return Err(Error::Pairing("partner map is not an involution".into()));
        }
        Ok(Self {
            coefficients: vec![Vec::new(); k],
            eigenvalues,
            functions,
            energies,
            partner,
            measure,
            sample_interval,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.measure.len()
    }

    pub fn eigenvalues(&self) -> &[C64] {
        &self.eigenvalues
    }

    /// Angular frequency `Im γ_k` in rad/s.
    pub fn omega(&self, k: usize) -> f64 {
        self.eigenvalues[k].im
    }

    pub fn frequency_hz(&self, k: usize) -> f64 {
        self.omega(k) / TAU
    }

    pub fn function(&self, k: usize) -> &[C64] {
        &self.functions[k]
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Coefficients of mode `k` in the kernel eigenbasis (empty for bases
    /// assembled with [`KoopmanBasis::from_parts`]).
    pub fn coefficients(&self, k: usize) -> &[C64] {
        &self.coefficients[k]
    }

    pub fn partner(&self, k: usize) -> usize {
        self.partner[k]
    }

    pub fn partners(&self) -> &[usize] {
        &self.partner
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    /// `⟨f, g⟩ = Σ_n μ_n conj(f_n) g_n`.
    pub fn inner(&self, f: &[C64], g: &[C64]) -> C64 {
        self.measure
            .iter()
            .zip(f.iter().zip(g))
            .map(|(m, (a, b))| a.conj() * b * *m)
            .sum()
    }

    /// Trivial mode first with zero frequency and energy, energies sorted,
    /// conjugate pairs matched in eigenvalue and energy.
    pub fn check_invariants(&self) -> Result<()> {
        if self.is_empty() || self.eigenvalues[0].norm() > 1e-8 || self.energies[0].abs() > 1e-8 {
            return Err(Error::DegenerateSpectrum("first mode is not the trivial mode".into()));
        }
        if let Some(k) = (1..self.len()).find(|&k| self.energies[k] < self.energies[k - 1]) {
            return Err(Error::DegenerateSpectrum(format!("energies not sorted at mode {k}")));
        }
        for k in 0..self.len() {
            let p = self.partner[k];
            if (self.eigenvalues[p] - self.eigenvalues[k].conj()).norm() > 1e-6
                || (self.energies[p] - self.energies[k]).abs() > 1e-6
            {
                return Err(Error::Pairing(format!("mode {k} and partner {p} do not match")));
            }
        }
        Ok(())
    }

    pub fn header(&self, params: BasisParams) -> BasisHeader {
        BasisHeader {
            eigenvalues: self.eigenvalues.iter().map(|g| [g.re, g.im]).collect(),
            frequency_hz: (0..self.len()).map(|k| self.frequency_hz(k)).collect(),
            energies: self.energies.clone(),
            partner: self.partner.clone(),
            sample_interval_seconds: self.sample_interval,
            params,
        }
    }

    /// CSV with columns `psi<k>_re, psi<k>_im`, one row per embedded point.
    pub fn write_functions(&self, writer: impl Write) -> Result<()> {
        let names: Vec<String> = (0..self.len())
            .flat_map(|k| [format!("psi{k}_re"), format!("psi{k}_im")])
            .collect();
        let header: Vec<&str> = names.iter().map(String::as_str).collect();
        let rows = (0..self.n_points()).map(|n| {
            self.functions
                .iter()
                .flat_map(|f| [format_f64(f[n].re), format_f64(f[n].im)])
                .collect()
        });
        write_table(writer, &header, rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisParams {
    pub delays: usize,
    pub l: usize,
    pub l_prime: usize,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisHeader {
    /// `[re, im]` of each `γ_k`, in 1/s.
    pub eigenvalues: Vec<[f64; 2]>,
    pub frequency_hz: Vec<f64>,
    pub energies: Vec<f64>,
    pub partner: Vec<usize>,
    pub sample_interval_seconds: f64,
    pub params: BasisParams,
}

/// Evaluates kernel and Koopman eigenfunctions at new delay-embedded points.
pub struct NystromExtender<'a> {
    graph: &'a DelayGraph,
    markov: &'a MarkovMatrix,
    basis: &'a KernelEigenbasis,
    landmarks: Mat<f64>,
}

impl<'a> NystromExtender<'a> {
    /// `training` must be the panel the graph was built from.
    pub fn new(
        graph: &'a DelayGraph,
        markov: &'a MarkovMatrix,
        basis: &'a KernelEigenbasis,
        training: &crate::data::LoadPanel,
    ) -> Result<Self> {
        let landmarks = delay_embed(training, graph.config().delays)?;
        if landmarks.nrows() != graph.n_points() || basis.n_points() != graph.n_points() {
            return Err(Error::Alignment(format!(
                "training panel embeds to {} points, graph has {}",
                landmarks.nrows(),
                graph.n_points()
            )));
        }
        Ok(Self {
            graph,
            markov,
            basis,
            landmarks,
        })
    }

    /// Normalized kernel row `p(x, x_j)` for a history of at least `Q`
    /// samples (rows in time order, last row is the current sample).
    pub fn kernel_row(&self, history: MatRef<'_, f64>) -> Result<Vec<(usize, f64)>> {
        let cfg = self.graph.config();
        let q = cfg.delays;
        let d = self.landmarks.ncols() / q;
        if history.nrows() < q {
            return Err(Error::History {
                needed: q,
                found: history.nrows(),
            });
        }
        if history.ncols() != d {
            return Err(Error::Alignment(format!(
                "history has {} stations, model has {d}",
                history.ncols()
            )));
        }
        let last = history.nrows() - 1;
        let point: Vec<f64> = (0..q * d).map(|c| history[(last - c / d, c % d)]).collect();
        let n = self.landmarks.nrows();
        let dist: Vec<f64> = (0..n)
            .map(|j| {
                let row = self.landmarks.row(j);
                let mut acc = crate::linalg::CompensatedSum::default();
                for (a, b) in point.iter().zip(row.iter()) {
                    acc.add((a - b) * (a - b));
                }
                acc.value() / q as f64
            })
            .collect();
        let k = cfg.knn.min(n - 1);
        let mut sorted = dist.clone();
        sorted.sort_by(f64::total_cmp);
        let radius = sorted[k];
        let stats = neighbor_stats(&mut sorted[1..].to_vec(), k);
        let rho = if stats.mean > 0.0 {
            1.0 / stats.mean
        } else {
            self.graph.density().iter().copied().fold(0.0, f64::max)
        };
        let eps = self.graph.epsilon();
        let density = self.graph.density();
        let radius_j = self.graph.radius();
        let qsum = self.markov.row_sums();
        let mut row = Vec::new();
        let mut norm = 0.0;
        for j in 0..n {
            if dist[j] <= radius || dist[j] <= radius_j[j] {
                let kv = (-dist[j] * density_factor(cfg, rho, density[j]) / eps).exp();
                if kv > 0.0 {
                    norm += kv / qsum[j].sqrt();
                    row.push((j, kv));
                }
            }
        }
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::IllConditioned {
                index: 0,
                reason: "kernel row vanishes: point is far from every landmark".into(),
            });
        }
        Ok(row
            .into_iter()
            .map(|(j, kv)| (j, kv / (norm * qsum[j].sqrt())))
            .collect())
    }

    /// `φ_i(x) = (1/λ_i) Σ_j p(x, x_j) φ_i(x_j)` for every kernel eigenfunction.
    pub fn extend_kernel(&self, history: MatRef<'_, f64>) -> Result<Vec<f64>> {
        let row = self.kernel_row(history)?;
        let phi = self.basis.functions();
        self.basis
            .eigenvalues()
            .iter()
            .enumerate()
            .map(|(i, &lam)| {
                if lam.abs() <= NYSTROM_MIN_EIGENVALUE {
                    return Err(Error::IllConditioned {
                        index: i,
                        reason: format!("kernel eigenvalue {lam:e} is too small"),
                    });
                }
                Ok(row.iter().map(|&(j, p)| p * phi[(j, i)]).sum::<f64>() / lam)
            })
            .collect()
    }

    /// Koopman eigenfunctions at the new point through their kernel coefficients.
    pub fn extend_koopman(&self, koopman: &KoopmanBasis, history: MatRef<'_, f64>) -> Result<Vec<C64>> {
        let phi = self.extend_kernel(history)?;
        (0..koopman.len())
            .map(|k| {
                let c = koopman.coefficients(k);
                if c.len() != phi.len() {
                    return Err(Error::Alignment(format!(
                        "mode {k} has {} coefficients, kernel basis has {}",
                        c.len(),
                        phi.len()
                    )));
                }
                Ok(c.iter().zip(&phi).map(|(c, p)| c * p).sum())
            })
            .collect()
    }
}

/// `max_{1≤t≤T} ‖ψ_{·+t} − e^{iωtτ} ψ_·‖ / ‖ψ_·‖` over the overlapping window.
pub fn coherence_residual(psi: &[C64], omega: f64, tau: f64, horizon: usize) -> Result<f64> {
    if horizon == 0 || horizon >= psi.len() {
        return Err(Error::Config(format!(
            "coherence horizon must satisfy 1 <= T < {}, got {horizon}",
            psi.len()
        )));
    }
    let mut worst: f64 = 0.0;
    for t in 1..=horizon {
        let rot = C64::from_polar(1.0, omega * t as f64 * tau);
        let count = psi.len() - t;
        let num: f64 = (0..count).map(|n| (psi[n + t] - rot * psi[n]).norm_sqr()).sum();
        let den: f64 = (0..count).map(|n| psi[n].norm_sqr()).sum();
        let r = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Sizes and regularization of the Galerkin stage.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SpectralConfig {
    /// Number of kernel eigenfunctions `l`.
    pub l: usize,
    /// Number of Koopman eigenfunctions kept, `l'`.
    pub l_prime: usize,
    /// Diffusion regularization `θ`.
    pub theta: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            l: 100,
            l_prime: 50,
            theta: 1e-9,
        }
    }
}
