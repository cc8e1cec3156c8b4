//! FFT-backed spectral helpers for plots and the interactive demo.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::scene::BandGrid;

/// Power spectrum |FFT(x)|^2 / n, bins ordered 0..f_nyq.
pub fn periodogram(x: &[Complex64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> = x
        .iter()
        .map(|c| rustfft::num_complex::Complex::new(c.re, c.im))
        .collect();
    fft.process(&mut buf);
    buf.iter().map(|c| c.norm_sqr() / n as f64).collect()
}

/// Periodogram in dB relative to the strongest bin, clamped at `floor_db`.
pub fn periodogram_db(x: &[Complex64], floor_db: f64) -> Vec<f64> {
    let psd = periodogram(x);
    let peak = psd.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    psd.iter()
        .map(|&p| (10.0 * (p / peak).log10()).max(floor_db))
        .collect()
}

/// Total PSD energy falling inside each band of the grid.
pub fn band_energies(psd: &[f64], grid: &BandGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.num_bands];
    let n = psd.len() as f64;
    let f_nyq = grid.f_nyq_hz();
    for (k, &p) in psd.iter().enumerate() {
        let f = k as f64 / n * f_nyq;
        if let Some(b) = grid.band_of_offset(f) {
            out[b] += p;
        }
    }
    out
}

/// Averages `psd` down to at most `max_points` bins for plotting.
pub fn decimate(psd: &[f64], max_points: usize) -> Vec<f64> {
    if psd.len() <= max_points || max_points == 0 {
        return psd.to_vec();
    }
    let step = psd.len().div_ceil(max_points);
    psd.chunks(step)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}
