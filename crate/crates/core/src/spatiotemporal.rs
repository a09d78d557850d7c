//! Koopman modes of the observable: lag projections, reconstruction from a
//! mode subset, and power spectra of eigenfunction time series.

use std::io::Write;

use faer::Mat;
use rustfft::FftPlanner;

use crate::artifact::{format_f64, write_table};
use crate::data::{format_timestamp, LoadPanel};
use crate::error::{Error, Result};
use crate::spectral::KoopmanBasis;
use crate::C64;

/// Relative imaginary residue above which a reconstruction is rejected.
pub const REALNESS_TOLERANCE: f64 = 1e-8;

/// Lag coefficients `A_k(qτ)` for every mode, aligned with the embedding.
#[derive(Clone, Debug)]
pub struct ModeProjection {
    /// `[mode][lag][station]`.
    lags: Vec<Vec<Vec<C64>>>,
    delays: usize,
    station_ids: Vec<String>,
    sample_interval: f64,
    /// Timestamp of embedded point 0, i.e. physical sample `Q − 1`.
    aligned_start: f64,
}

/// `A_k(q) = (1/N_e) Σ_n conj(ψ_{n,k}) x_{n+Q−1−q}`.
///
/// Embedded point `n` sits at physical sample `n + Q − 1`, so every lag up to
/// `Q − 1` has a full set of terms.
pub fn project_modes(panel: &LoadPanel, basis: &KoopmanBasis, delays: usize) -> Result<ModeProjection> {
    let n_points = basis.n_points();
    if delays == 0 || panel.n_samples() + 1 != n_points + delays {
        return Err(Error::Alignment(format!(
            "panel of {} samples with Q = {delays} does not embed to {n_points} points",
            panel.n_samples()
        )));
    }
    let d = panel.n_stations();
    let lags = (0..basis.len())
        .map(|k| {
            let psi = basis.function(k);
            (0..delays)
                .map(|q| {
                    (0..d)
                        .map(|s| {
                            let total: C64 = (0..n_points)
                                .map(|n| psi[n].conj() * panel.value(n + delays - 1 - q, s))
                                .sum();
                            total / n_points as f64
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(ModeProjection {
        lags,
        delays,
        station_ids: panel.station_ids().to_vec(),
        sample_interval: panel.sample_interval(),
        aligned_start: panel.timestamp(delays - 1),
    })
}

impl ModeProjection {
    pub fn n_modes(&self) -> usize {
        self.lags.len()
    }

    pub fn delays(&self) -> usize {
        self.delays
    }

    /// `A_k(qτ)` per station.
    pub fn lag(&self, k: usize, q: usize) -> &[C64] {
        &self.lags[k][q]
    }

    /// `|A_k(0)|` per station.
    pub fn spatial_pattern(&self, k: usize) -> Vec<f64> {
        self.lags[k][0].iter().map(|a| a.norm()).collect()
    }

    pub fn station_ids(&self) -> &[String] {
        &self.station_ids
    }

    /// Per mode: frequency (Hz), energy, then `|A_k(0)|` per station.
    pub fn write_modes(&self, basis: &KoopmanBasis, writer: impl Write) -> Result<()> {
        let mut header = vec!["mode", "frequency_hz", "energy"];
        header.extend(self.station_ids.iter().map(String::as_str));
        let rows = (0..self.n_modes()).map(|k| {
            let mut row = vec![
                k.to_string(),
                format_f64(basis.frequency_hz(k)),
                format_f64(basis.energies()[k]),
            ];
            row.extend(self.spatial_pattern(k).into_iter().map(format_f64));
            row
        });
        write_table(writer, &header, rows)
    }

    /// Timestamps of the embedded points.
    pub fn timestamp(&self, n: usize) -> f64 {
        self.aligned_start + n as f64 * self.sample_interval
    }
}

fn check_closed(basis: &KoopmanBasis, modes: &[usize]) -> Result<()> {
    if let Some(&bad) = modes.iter().find(|&&k| k >= basis.len()) {
        return Err(Error::Config(format!("mode {bad} out of range (basis has {})", basis.len())));
    }
    for &k in modes {
        let p = basis.partner(k);
        if !modes.contains(&p) {
            return Err(Error::Pairing(format!("mode {k} selected without its conjugate {p}")));
        }
    }
    Ok(())
}

/// `x_n = Σ_k (1/Q') Σ_{q<Q'} A_k(q) ψ_{n+q,k}` with `Q' = min(Q, N_e − n)`.
///
/// Rows correspond to the embedded points (physical samples `Q−1 ..= N−1`).
pub fn reconstruct(projection: &ModeProjection, basis: &KoopmanBasis, modes: &[usize]) -> Result<LoadPanel> {
    check_closed(basis, modes)?;
    if projection.n_modes() != basis.len() {
        return Err(Error::Alignment(format!(
            "projection has {} modes, basis has {}",
            projection.n_modes(),
            basis.len()
        )));
    }
    let n_points = basis.n_points();
    let d = projection.station_ids.len();
    let q_max = projection.delays;
    let mut acc = vec![C64::new(0.0, 0.0); n_points * d];
    let mut unique: Vec<usize> = modes.to_vec();
    unique.sort_unstable();
    unique.dedup();
    for &k in &unique {
        let psi = basis.function(k);
        for n in 0..n_points {
            let width = q_max.min(n_points - n);
            for s in 0..d {
                let sum: C64 = (0..width).map(|q| projection.lags[k][q][s] * psi[n + q]).sum();
                acc[n * d + s] += sum / width as f64;
            }
        }
    }
    let re_norm = acc.iter().map(|c| c.re * c.re).sum::<f64>().sqrt();
    let im_norm = acc.iter().map(|c| c.im * c.im).sum::<f64>().sqrt();
    if im_norm > REALNESS_TOLERANCE * re_norm.max(f64::MIN_POSITIVE) && im_norm > 0.0 {
        return Err(Error::Pairing(format!(
            "reconstruction has imaginary residue {im_norm:e} against real norm {re_norm:e}"
        )));
    }
    let values = Mat::from_fn(n_points, d, |n, s| acc[n * d + s].re);
    LoadPanel::new(
        values,
        projection.sample_interval,
        projection.station_ids.clone(),
        projection.aligned_start,
    )
}

/// Frequency (Hz) and power of each DFT bin, ordered from negative to positive
/// frequency and normalized to unit total power.
pub fn mode_power_spectrum(basis: &KoopmanBasis, k: usize) -> Result<Vec<(f64, f64)>> {
    power_spectrum(basis.function(k), basis.sample_interval())
}

pub fn power_spectrum(series: &[C64], sample_interval: f64) -> Result<Vec<(f64, f64)>> {
    let n = series.len();
    if n < 8 {
        return Err(Error::InsufficientData { needed: 8, found: n });
    }
    let mut buf = series.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let total: f64 = buf.iter().map(|c| c.norm_sqr()).sum();
    let half = n / 2;
    Ok((0..n)
        .map(|i| {
            let bin = (i + n - half) % n;
            let signed = bin as f64 - if bin >= n - half { n as f64 } else { 0.0 };
            let power = if total > 0.0 { buf[bin].norm_sqr() / total } else { 0.0 };
            (signed / (n as f64 * sample_interval), power)
        })
        .collect())
}

/// Fraction of power within `bins` bins of `frequency_hz`.
pub fn band_power_fraction(spectrum: &[(f64, f64)], frequency_hz: f64, bins: usize) -> f64 {
    if spectrum.len() < 2 {
        return 0.0;
    }
    let width = spectrum[1].0 - spectrum[0].0;
    let reach = (bins as f64 + 0.5) * width;
    spectrum
        .iter()
        .filter(|(f, _)| (f - frequency_hz).abs() <= reach)
        .map(|(_, p)| p)
        .sum()
}

pub fn write_temporal(projection: &ModeProjection, basis: &KoopmanBasis, k: usize, writer: impl Write) -> Result<()> {
    let psi = basis.function(k);
    let rows = psi.iter().enumerate().map(|(n, c)| {
        vec![
            format_timestamp(projection.timestamp(n)),
            format_f64(c.re),
            format_f64(c.im),
        ]
    });
    write_table(writer, &["time", "re", "im"], rows)
}

pub fn write_spectrum(spectrum: &[(f64, f64)], writer: impl Write) -> Result<()> {
    let rows = spectrum.iter().map(|&(f, p)| vec![format_f64(f), format_f64(p)]);
    write_table(writer, &["freq_hz", "power"], rows)
}
