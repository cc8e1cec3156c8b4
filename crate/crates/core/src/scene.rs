//! Wideband RF scene synthesis and the per-satellite channel.
//!
//! A scene is a complex baseband signal sampled at the span rate
//! `f_nyq = f_hi - f_lo` (800 MHz with defaults), carrying one root-raised-cosine
//! shaped PSK/QAM carrier per occupied 20 MHz band. Each satellite sees the same
//! scene through its own channel realization: a Doppler shift applied as a
//! complex-exponential rotation of the composite baseband, a scalar path loss,
//! and AWGN calibrated to the requested SNR.

use num_complex::Complex64;
use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::stats::pearson;
use crate::{derive_seed, tensorio, Error, Result};

/// Roll-off of the root-raised-cosine pulse shaping filter.
pub const RRC_ROLLOFF: f64 = 0.25;
/// Pulse truncation, in symbol periods on each side of the peak.
pub const RRC_SPAN_SYMBOLS: usize = 6;
/// Doppler magnitude bound for LEO satellite channels, Hz.
pub const DOPPLER_MAX_HZ: f64 = 480e3;

/// Contiguous grid of equal-width sensing bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandGrid {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub band_width_hz: f64,
    pub num_bands: usize,
}

impl Default for BandGrid {
    fn default() -> Self {
        // 40 x 20 MHz bands covering 13.025..13.825 GHz.
        BandGrid::new(13.025e9, 13.825e9, 20e6).expect("default grid is valid")
    }
}

impl BandGrid {
    pub fn new(f_lo_hz: f64, f_hi_hz: f64, band_width_hz: f64) -> Result<Self> {
        if !(f_hi_hz > f_lo_hz) || !(band_width_hz > 0.0) {
            return Err(Error::InvalidArgument(
                "band grid requires f_hi > f_lo and band_width > 0".into(),
            ));
        }
        let ratio = (f_hi_hz - f_lo_hz) / band_width_hz;
        let num_bands = ratio.round() as usize;
        if num_bands == 0 || (ratio - num_bands as f64).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "span {} Hz is not an integer multiple of band width {} Hz",
                f_hi_hz - f_lo_hz,
                band_width_hz
            )));
        }
        Ok(BandGrid {
            f_lo_hz,
            f_hi_hz,
            band_width_hz,
            num_bands,
        })
    }

    /// Complex baseband sampling rate covering the whole span.
    pub fn f_nyq_hz(&self) -> f64 {
        self.f_hi_hz - self.f_lo_hz
    }

    /// Maps an RF frequency to its baseband offset relative to `f_lo`.
    pub fn to_baseband_hz(&self, f_rf_hz: f64) -> f64 {
        f_rf_hz - self.f_lo_hz
    }

    /// Baseband offset of the center of band `k`.
    pub fn band_center_offset_hz(&self, band: usize) -> f64 {
        (band as f64 + 0.5) * self.band_width_hz
    }

    /// Band index containing a baseband offset, if inside the span.
    pub fn band_of_offset(&self, offset_hz: f64) -> Option<usize> {
        if offset_hz < 0.0 || offset_hz >= self.f_nyq_hz() {
            return None;
        }
        Some(((offset_hz / self.band_width_hz) as usize).min(self.num_bands - 1))
    }
}

/// Modulation of an occupied band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    Qpsk,
    Psk8,
    Qam16,
}

impl Modulation {
    pub const ALL: [Modulation; 3] = [Modulation::Qpsk, Modulation::Psk8, Modulation::Qam16];

    /// Draws one unit-average-energy constellation symbol.
    fn draw_symbol(self, rng: &mut ChaCha8Rng) -> Complex64 {
        match self {
            Modulation::Qpsk => {
                let re = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let im = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                Complex64::new(re, im) / 2f64.sqrt()
            }
            Modulation::Psk8 => {
                let k = rng.gen_range(0..8) as f64;
                Complex64::from_polar(1.0, PI / 8.0 + k * PI / 4.0)
            }
            Modulation::Qam16 => {
                let levels = [-3.0, -1.0, 1.0, 3.0];
                let re = levels[rng.gen_range(0..4)];
                let im = levels[rng.gen_range(0..4)];
                Complex64::new(re, im) / 10f64.sqrt()
            }
        }
    }
}

/// Ground-truth band occupancy: which bands carry a signal and with what
/// modulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTruth {
    pub bits: Vec<bool>,
    pub mod_schemes: Vec<Option<Modulation>>,
}

impl OccupancyTruth {
    pub fn empty(num_bands: usize) -> Self {
        OccupancyTruth {
            bits: vec![false; num_bands],
            mod_schemes: vec![None; num_bands],
        }
    }

    pub fn num_signals(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Truth bits as 0.0/1.0 targets for training.
    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// One satellite's channel draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub doppler_hz: f64,
    pub path_loss_db: f64,
    /// Per-sample SNR target in dB. `f64::INFINITY` disables the noise source.
    pub snr_db: f64,
    pub seed: u64,
}

impl ChannelRealization {
    pub fn new(doppler_hz: f64, path_loss_db: f64, snr_db: f64, seed: u64) -> Result<Self> {
        if !(doppler_hz.abs() <= DOPPLER_MAX_HZ) {
            return Err(Error::InvalidArgument(format!(
                "doppler {doppler_hz} Hz outside +/-{DOPPLER_MAX_HZ} Hz"
            )));
        }
        if !(path_loss_db >= 0.0) {
            return Err(Error::InvalidArgument("path loss must be >= 0 dB".into()));
        }
        if snr_db.is_nan() {
            return Err(Error::InvalidArgument("snr must not be NaN".into()));
        }
        Ok(ChannelRealization {
            doppler_hz,
            path_loss_db,
            snr_db,
            seed,
        })
    }

    /// Noiseless, unshifted, lossless channel.
    pub fn identity() -> Self {
        ChannelRealization {
            doppler_hz: 0.0,
            path_loss_db: 0.0,
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }

    /// Draws a channel for satellite `sat` of a scene: Doppler uniform in the
    /// LEO range, SNR uniform within +/-3 dB of the scene-level mean.
    pub fn draw(scene_seed: u64, sat: usize, mean_snr_db: f64) -> Self {
        let seed = derive_seed(scene_seed, "chan", sat as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doppler = rng.gen_range(-DOPPLER_MAX_HZ..=DOPPLER_MAX_HZ);
        let snr = mean_snr_db + rng.gen_range(-3.0..=3.0);
        ChannelRealization {
            doppler_hz: doppler,
            path_loss_db: 0.0,
            snr_db: snr,
            seed,
        }
    }
}

/// Nyquist-rate composite baseband plus its ground truth.
#[derive(Debug, Clone)]
pub struct WidebandScene {
    pub truth: OccupancyTruth,
    pub grid: BandGrid,
    pub baseband: Vec<Complex64>,
    pub seed: u64,
}

/// The scene as observed by one satellite after its channel.
#[derive(Debug, Clone)]
pub struct ReceivedSignal {
    pub samples: Vec<Complex64>,
    pub channel: ChannelRealization,
    pub truth: OccupancyTruth,
}

/// Picks `num_signals` distinct occupied bands uniformly without replacement
/// and assigns each a modulation uniformly from {QPSK, 8PSK, 16QAM}.
pub fn generate_occupancy(
    grid: &BandGrid,
    num_signals: usize,
    rng: &mut ChaCha8Rng,
) -> Result<OccupancyTruth> {
    if num_signals == 0 || num_signals > grid.num_bands {
        return Err(Error::InvalidArgument(format!(
            "num_signals {} outside 1..={}",
            num_signals, grid.num_bands
        )));
    }
    let mut truth = OccupancyTruth::empty(grid.num_bands);
    for band in index_sample(rng, grid.num_bands, num_signals) {
        truth.bits[band] = true;
        truth.mod_schemes[band] = Some(Modulation::ALL[rng.gen_range(0..3)]);
    }
    Ok(truth)
}

/// Root-raised-cosine impulse response sampled at `sps` samples per symbol,
/// truncated to `RRC_SPAN_SYMBOLS` on each side, normalized to unit energy.
fn rrc_taps(sps: usize, rolloff: f64) -> Vec<f64> {
    let half = RRC_SPAN_SYMBOLS * sps;
    let mut taps = Vec::with_capacity(2 * half + 1);
    for i in 0..=2 * half {
        let t = (i as f64 - half as f64) / sps as f64;
        let v = if t.abs() < 1e-12 {
            1.0 + rolloff * (4.0 / PI - 1.0)
        } else if (t.abs() - 1.0 / (4.0 * rolloff)).abs() < 1e-9 {
            (rolloff / 2f64.sqrt())
                * ((1.0 + 2.0 / PI) * (PI / (4.0 * rolloff)).sin()
                    + (1.0 - 2.0 / PI) * (PI / (4.0 * rolloff)).cos())
        } else {
            let num = (PI * t * (1.0 - rolloff)).sin()
                + 4.0 * rolloff * t * (PI * t * (1.0 + rolloff)).cos();
            let den = PI * t * (1.0 - (4.0 * rolloff * t) * (4.0 * rolloff * t));
            num / den
        };
        taps.push(v);
    }
    let energy: f64 = taps.iter().map(|v| v * v).sum();
    let scale = 1.0 / energy.sqrt();
    taps.iter_mut().for_each(|v| *v *= scale);
    taps
}

/// Synthesizes the composite complex baseband for a given occupancy.
///
/// Each occupied band carries an independent symbol stream, pulse-shaped with a
/// root-raised-cosine filter whose occupied bandwidth equals the band width,
/// mixed to the band center offset. The composite is normalized to unit average
/// power (unless the occupancy is empty, in which case it is all zeros).
pub fn synthesize_baseband(
    truth: &OccupancyTruth,
    grid: &BandGrid,
    duration_samples: usize,
    seed: u64,
) -> Result<WidebandScene> {
    if truth.bits.len() != grid.num_bands {
        return Err(Error::InvalidArgument(format!(
            "truth has {} bands, grid has {}",
            truth.bits.len(),
            grid.num_bands
        )));
    }
    if duration_samples == 0 {
        return Err(Error::InvalidArgument("duration must be >= 1".into()));
    }
    let f_nyq = grid.f_nyq_hz();
    let symbol_rate = grid.band_width_hz / (1.0 + RRC_ROLLOFF);
    let sps_f = f_nyq / symbol_rate;
    let sps = sps_f.round() as usize;
    if sps < 2 || (sps_f - sps as f64).abs() > 1e-6 * sps_f {
        return Err(Error::InvalidArgument(format!(
            "span rate {f_nyq} Hz is not an integer multiple of the symbol rate {symbol_rate} Hz"
        )));
    }

    let mut baseband = vec![Complex64::new(0.0, 0.0); duration_samples];
    let taps = rrc_taps(sps, RRC_ROLLOFF);
    let half = (taps.len() - 1) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "baseband", 0));

    for band in 0..grid.num_bands {
        if !truth.bits[band] {
            continue;
        }
        let scheme = truth.mod_schemes[band].ok_or_else(|| {
            Error::InvalidArgument(format!("band {band} occupied but has no modulation"))
        })?;
        // Symbols whose pulse overlaps [0, duration): centers at k*sps.
        let k_min = -(RRC_SPAN_SYMBOLS as i64) - 1;
        let k_max = (duration_samples / sps) as i64 + RRC_SPAN_SYMBOLS as i64 + 1;
        let mut shaped = vec![Complex64::new(0.0, 0.0); duration_samples];
        for k in k_min..=k_max {
            let sym = scheme.draw_symbol(&mut rng);
            let center = k * sps as i64;
            let lo = (center - half as i64).max(0);
            let hi = (center + half as i64).min(duration_samples as i64 - 1);
            for n in lo..=hi {
                let tap = (n - center + half as i64) as usize;
                shaped[n as usize] += sym * taps[tap];
            }
        }
        let f_off = grid.band_center_offset_hz(band);
        let step = Complex64::from_polar(1.0, 2.0 * PI * f_off / f_nyq);
        let mut phase = Complex64::new(1.0, 0.0);
        for (dst, s) in baseband.iter_mut().zip(shaped.iter()) {
            *dst += s * phase;
            phase *= step;
        }
    }

    // Unit average power keeps SNR bookkeeping and f32 storage well scaled.
    let power: f64 =
        baseband.iter().map(|c| c.norm_sqr()).sum::<f64>() / duration_samples as f64;
    if power > 0.0 {
        let scale = 1.0 / power.sqrt();
        baseband.iter_mut().for_each(|c| *c *= scale);
    }

    Ok(WidebandScene {
        truth: truth.clone(),
        grid: grid.clone(),
        baseband,
        seed,
    })
}

/// Applies one satellite's channel: path-loss scaling, Doppler rotation, and
/// AWGN sized so the realized per-sample SNR matches `ch.snr_db`.
pub fn apply_satellite_channel(scene: &WidebandScene, ch: &ChannelRealization) -> ReceivedSignal {
    let f_nyq = scene.grid.f_nyq_hz();
    let gain = 10f64.powf(-ch.path_loss_db / 20.0);
    let step = Complex64::from_polar(1.0, 2.0 * PI * ch.doppler_hz / f_nyq);
    let mut phase = Complex64::new(1.0, 0.0);
    let mut samples: Vec<Complex64> = Vec::with_capacity(scene.baseband.len());
    let mut signal_power = 0.0;
    for &x in &scene.baseband {
        let s = x * phase * gain;
        signal_power += s.norm_sqr();
        samples.push(s);
        phase *= step;
    }
    signal_power /= samples.len().max(1) as f64;

    if ch.snr_db.is_finite() && signal_power > 0.0 {
        let noise_var = signal_power * 10f64.powf(-ch.snr_db / 10.0);
        let sigma = (noise_var / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ch.seed, "awgn", 0));
        for s in samples.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *s += Complex64::new(re * sigma, im * sigma);
        }
    }

    ReceivedSignal {
        samples,
        channel: ch.clone(),
        truth: scene.truth.clone(),
    }
}

/// Pearson correlation matrix between the real-part streams of the same scene
/// observed under each Doppler shift in `doppler_list` (no noise, no loss).
/// Symmetric with an exact unit diagonal.
pub fn doppler_pearson_matrix(
    scene: &WidebandScene,
    doppler_list: &[f64],
) -> Result<ndarray::Array2<f64>> {
    if doppler_list.is_empty() {
        return Err(Error::InvalidArgument("doppler list is empty".into()));
    }
    let f_nyq = scene.grid.f_nyq_hz();
    let streams: Vec<Vec<f64>> = doppler_list
        .iter()
        .map(|&d| {
            let step = Complex64::from_polar(1.0, 2.0 * PI * d / f_nyq);
            let mut phase = Complex64::new(1.0, 0.0);
            scene
                .baseband
                .iter()
                .map(|&x| {
                    let v = (x * phase).re;
                    phase *= step;
                    v
                })
                .collect()
        })
        .collect();

    let n = doppler_list.len();
    let mut m = ndarray::Array2::<f64>::zeros((n, n));
    for i in 0..n {
        m[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let r = pearson(&streams[i], &streams[j])?;
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    Ok(m)
}

/// Sidecar metadata stored next to a scene's baseband tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSidecar {
    pub grid: BandGrid,
    pub seed: u64,
    pub duration_samples: usize,
    pub truth: OccupancyTruth,
    pub channels: Vec<ChannelRealization>,
}

/// Writes `<base>.f32` (interleaved re/im, row-major [n][2]) and `<base>.json`.
pub fn save_scene<P: AsRef<Path>>(
    base: P,
    scene: &WidebandScene,
    channels: &[ChannelRealization],
) -> Result<()> {
    let mut flat = Vec::with_capacity(scene.baseband.len() * 2);
    for c in &scene.baseband {
        flat.push(c.re as f32);
        flat.push(c.im as f32);
    }
    let base = base.as_ref();
    tensorio::write_f32(base.with_extension("f32"), &flat)?;
    tensorio::write_sidecar(
        base.with_extension("json"),
        &SceneSidecar {
            grid: scene.grid.clone(),
            seed: scene.seed,
            duration_samples: scene.baseband.len(),
            truth: scene.truth.clone(),
            channels: channels.to_vec(),
        },
    )
}

/// Reads a scene written by [`save_scene`].
pub fn load_scene<P: AsRef<Path>>(base: P) -> Result<(WidebandScene, Vec<ChannelRealization>)> {
    let base = base.as_ref();
    let side: SceneSidecar = tensorio::read_sidecar(base.with_extension("json"))?;
    let flat = tensorio::read_f32(base.with_extension("f32"))?;
    if flat.len() != side.duration_samples * 2 {
        return Err(Error::CorruptStream(format!(
            "scene tensor holds {} floats, sidecar says {} samples",
            flat.len(),
            side.duration_samples
        )));
    }
    let baseband = flat
        .chunks_exact(2)
        .map(|c| Complex64::new(c[0] as f64, c[1] as f64))
        .collect();
    Ok((
        WidebandScene {
            truth: side.truth,
            grid: side.grid,
            baseband,
            seed: side.seed,
        },
        side.channels,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive DFT power spectrum, independent of the synthesis path and of the
    /// FFT-backed production periodogram.
    fn dft_psd(x: &[Complex64]) -> Vec<f64> {
        let n = x.len();
        let mut psd = vec![0.0; n];
        for (k, p) in psd.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k as f64) * (i as f64) / n as f64;
                acc += v * Complex64::from_polar(1.0, ang);
            }
            *p = acc.norm_sqr() / n as f64;
        }
        psd
    }

    fn band_energy_fraction(psd: &[f64], grid: &BandGrid, band: usize) -> f64 {
        let n = psd.len() as f64;
        let f_nyq = grid.f_nyq_hz();
        let lo = band as f64 * grid.band_width_hz;
        let hi = lo + grid.band_width_hz;
        let total: f64 = psd.iter().sum();
        let in_band: f64 = psd
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let f = *k as f64 / n * f_nyq;
                f >= lo && f < hi
            })
            .map(|(_, &p)| p)
            .sum();
        in_band / total
    }

    #[test]
    fn default_grid_matches_span() {
        let g = BandGrid::default();
        assert_eq!(g.num_bands, 40);
        assert!((g.f_nyq_hz() - 800e6).abs() < 1.0);
        // Carrier range endpoints map onto baseband offsets 25 MHz and 775 MHz.
        assert!((g.to_baseband_hz(13.05e9) - 25e6).abs() < 1.0);
        assert!((g.to_baseband_hz(13.8e9) - 775e6).abs() < 1.0);
    }

    #[test]
    fn grid_rejects_fractional_band_count() {
        assert!(BandGrid::new(0.0, 810e6, 20e6 * 1.00001).is_err());
        assert!(BandGrid::new(10.0, 10.0, 20e6).is_err());
    }

    #[test]
    fn occupancy_popcount_and_bounds() {
        let g = BandGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = generate_occupancy(&g, 2, &mut rng).unwrap();
        assert_eq!(t.num_signals(), 2);
        for (bit, m) in t.bits.iter().zip(t.mod_schemes.iter()) {
            assert_eq!(*bit, m.is_some());
        }
        let all = generate_occupancy(&g, 40, &mut rng).unwrap();
        assert!(all.bits.iter().all(|&b| b));
        assert!(generate_occupancy(&g, 41, &mut rng).is_err());
        assert!(generate_occupancy(&g, 0, &mut rng).is_err());
    }

    #[test]
    fn occupancy_is_uniform_over_bands() {
        // 1e5 draws of 2-of-40; every band's hit rate must sit within 3 sigma
        // of 0.05 under the binomial model.
        let g = BandGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 100_000usize;
        let mut counts = vec![0usize; g.num_bands];
        for _ in 0..draws {
            let t = generate_occupancy(&g, 2, &mut rng).unwrap();
            for (band, &bit) in t.bits.iter().enumerate() {
                if bit {
                    counts[band] += 1;
                }
            }
        }
        let p = 2.0 / 40.0;
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        for (band, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "band {band}: frequency {freq} outside {p} +/- 3x{sigma}"
            );
        }
    }

    #[test]
    fn empty_occupancy_synthesizes_silence() {
        let g = BandGrid::default();
        let t = OccupancyTruth::empty(g.num_bands);
        let s = synthesize_baseband(&t, &g, 1024, 1).unwrap();
        assert!(s.baseband.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn single_carrier_energy_is_confined() {
        let g = BandGrid::default();
        let mut t = OccupancyTruth::empty(g.num_bands);
        t.bits[17] = true;
        t.mod_schemes[17] = Some(Modulation::Qpsk);
        let s = synthesize_baseband(&t, &g, 2048, 99).unwrap();
        let psd = dft_psd(&s.baseband);
        let frac = band_energy_fraction(&psd, &g, 17);
        assert!(frac >= 0.95, "in-band fraction {frac} < 0.95");
    }

    #[test]
    fn out_of_band_leakage_below_one_percent() {
        let g = BandGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = generate_occupancy(&g, 3, &mut rng).unwrap();
        let s = synthesize_baseband(&t, &g, 2048, 55).unwrap();
        let psd = dft_psd(&s.baseband);
        let occupied: f64 = (0..g.num_bands)
            .filter(|&b| t.bits[b])
            .map(|b| band_energy_fraction(&psd, &g, b))
            .sum();
        assert!(occupied >= 0.99, "occupied-band fraction {occupied} < 0.99");
    }

    #[test]
    fn synthesis_is_deterministic_in_seed() {
        let g = BandGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = generate_occupancy(&g, 2, &mut rng).unwrap();
        let a = synthesize_baseband(&t, &g, 512, 77).unwrap();
        let b = synthesize_baseband(&t, &g, 512, 77).unwrap();
        let c = synthesize_baseband(&t, &g, 512, 78).unwrap();
        assert_eq!(a.baseband, b.baseband);
        assert_ne!(a.baseband, c.baseband);
    }

    #[test]
    fn identity_channel_is_transparent() {
        let g = BandGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = generate_occupancy(&g, 2, &mut rng).unwrap();
        let s = synthesize_baseband(&t, &g, 1024, 4).unwrap();
        let rx = apply_satellite_channel(&s, &ChannelRealization::identity());
        for (a, b) in s.baseband.iter().zip(rx.samples.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn doppler_moves_psd_peak_by_one_bin_tolerance() {
        let g = BandGrid::default();
        let mut t = OccupancyTruth::empty(g.num_bands);
        t.bits[20] = true;
        t.mod_schemes[20] = Some(Modulation::Qpsk);
        let s = synthesize_baseband(&t, &g, 2048, 13).unwrap();

        let doppler = 400e3;
        let ch = ChannelRealization::new(doppler, 0.0, f64::INFINITY, 0).unwrap();
        let rx = apply_satellite_channel(&s, &ch);

        let psd0 = dft_psd(&s.baseband);
        let psd1 = dft_psd(&rx.samples);
        let argmax = |p: &[f64]| {
            p.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0 as i64
        };
        let bin_hz = g.f_nyq_hz() / s.baseband.len() as f64;
        let expected = (doppler / bin_hz).round() as i64;
        let moved = argmax(&psd1) - argmax(&psd0);
        assert!(
            (moved - expected).abs() <= 1,
            "peak moved {moved} bins, expected {expected} +/- 1"
        );
    }

    #[test]
    fn realized_snr_matches_target_within_tenth_db() {
        let g = BandGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = generate_occupancy(&g, 2, &mut rng).unwrap();
        let n = 1 << 20;
        let s = synthesize_baseband(&t, &g, n, 14).unwrap();
        for &target in &[-10.0, 0.0, 10.0] {
            let ch = ChannelRealization::new(120e3, 0.0, target, 9).unwrap();
            let rx = apply_satellite_channel(&s, &ch);
            // Noise = received minus the noiseless channel output.
            let clean = apply_satellite_channel(
                &s,
                &ChannelRealization::new(120e3, 0.0, f64::INFINITY, 9).unwrap(),
            );
            let mut p_sig = 0.0;
            let mut p_noise = 0.0;
            for (r, c) in rx.samples.iter().zip(clean.samples.iter()) {
                p_sig += c.norm_sqr();
                p_noise += (r - c).norm_sqr();
            }
            let snr_db = 10.0 * (p_sig / p_noise).log10();
            assert!(
                (snr_db - target).abs() < 0.1,
                "target {target} dB, realized {snr_db} dB"
            );
        }
    }

    #[test]
    fn path_loss_scales_amplitude() {
        let g = BandGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t = generate_occupancy(&g, 2, &mut rng).unwrap();
        let s = synthesize_baseband(&t, &g, 512, 3).unwrap();
        let ch = ChannelRealization::new(0.0, 6.0, f64::INFINITY, 0).unwrap();
        let rx = apply_satellite_channel(&s, &ch);
        let gain = 10f64.powf(-6.0 / 20.0);
        for (a, b) in s.baseband.iter().zip(rx.samples.iter()) {
            assert!((a * gain - b).norm() < 1e-12);
        }
    }

    #[test]
    fn channel_rejects_out_of_range_doppler() {
        assert!(ChannelRealization::new(500e3, 0.0, 0.0, 0).is_err());
        assert!(ChannelRealization::new(-480e3, 0.0, 0.0, 0).is_ok());
    }

    #[test]
    fn pearson_matrix_symmetric_unit_diagonal() {
        let g = BandGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let t = generate_occupancy(&g, 2, &mut rng).unwrap();
        let s = synthesize_baseband(&t, &g, 2048, 8).unwrap();
        let shifts = [-300e3, 0.0, 0.0, 250e3];
        let m = doppler_pearson_matrix(&s, &shifts).unwrap();
        for i in 0..shifts.len() {
            assert_eq!(m[(i, i)], 1.0);
            for j in 0..shifts.len() {
                assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-12);
            }
        }
        // Identical shifts correlate perfectly.
        assert!((m[(1, 2)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pearson_matrix_rejects_silent_scene() {
        let g = BandGrid::default();
        let t = OccupancyTruth::empty(g.num_bands);
        let s = synthesize_baseband(&t, &g, 256, 0).unwrap();
        assert!(matches!(
            doppler_pearson_matrix(&s, &[0.0, 1e3]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn scene_container_roundtrip() {
        let dir = std::env::temp_dir().join("cospec_scene_io");
        std::fs::create_dir_all(&dir).unwrap();
        let g = BandGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = generate_occupancy(&g, 3, &mut rng).unwrap();
        let s = synthesize_baseband(&t, &g, 300, 123).unwrap();
        let chans = vec![ChannelRealization::draw(123, 0, 5.0)];
        save_scene(dir.join("scene0"), &s, &chans).unwrap();
        let (back, back_chans) = load_scene(dir.join("scene0")).unwrap();
        assert_eq!(back.truth, s.truth);
        assert_eq!(back_chans, chans);
        assert_eq!(back.baseband.len(), s.baseband.len());
        for (a, b) in s.baseband.iter().zip(back.baseband.iter()) {
            // f32 storage quantization only.
            assert!((a - b).norm() < 1e-6);
        }
    }
}
