//! Multi-coset sub-Nyquist acquisition.
//!
//! P parallel samplers each run at 1/L of the Nyquist rate, offset by a distinct
//! integer delay `c_j` on the Nyquist grid. The j-th sampler's stream is
//! `x[n*L + c_j]`, pure index selection with no interpolation. Real and
//! imaginary parts are stacked as rows `0..P` and `P..2P` of a real matrix.

use ndarray::Array2;
use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scene::{ChannelRealization, ReceivedSignal};
use crate::{Error, Result};

/// Multi-coset sampler configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosetConfig {
    /// Number of sampling channels (cosets).
    pub p: usize,
    /// Ratio of the coset sampling interval to the Nyquist interval.
    pub l: usize,
    /// Distinct integer offsets, one per channel, each in `0..l`.
    pub offsets: Vec<usize>,
    /// Samples captured per channel.
    pub n: usize,
}

impl CosetConfig {
    /// Builds a config with offsets drawn once from a seeded RNG and frozen.
    pub fn with_random_offsets(p: usize, l: usize, n: usize, seed: u64) -> Result<Self> {
        if p >= l {
            return Err(Error::InvalidArgument(format!("need P < L, got P={p} L={l}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offsets: Vec<usize> = index_sample(&mut rng, l, p).into_iter().collect();
        offsets.sort_unstable();
        Self::new(p, l, offsets, n)
    }

    /// Full-rate configuration: L = P with consecutive offsets, so the matrix
    /// holds every Nyquist sample of a contiguous window.
    pub fn nyquist(p: usize, n: usize) -> Result<Self> {
        Self::new(p, p, (0..p).collect(), n)
    }

    pub fn new(p: usize, l: usize, offsets: Vec<usize>, n: usize) -> Result<Self> {
        if p == 0 || n == 0 || p > l {
            return Err(Error::InvalidArgument(format!(
                "invalid coset config P={p} L={l} N={n}"
            )));
        }
        if offsets.len() != p {
            return Err(Error::InvalidArgument(format!(
                "expected {p} offsets, got {}",
                offsets.len()
            )));
        }
        let mut seen = vec![false; l];
        for &c in &offsets {
            if c >= l {
                return Err(Error::InvalidArgument(format!("offset {c} >= L={l}")));
            }
            if seen[c] {
                return Err(Error::InvalidArgument(format!("duplicate offset {c}")));
            }
            seen[c] = true;
        }
        Ok(CosetConfig { p, l, offsets, n })
    }

    /// Default sub-Nyquist setup: 8 channels, interval ratio 16, 400 samples.
    pub fn default_with_seed(seed: u64) -> Self {
        Self::with_random_offsets(8, 16, 400, seed).expect("default coset config is valid")
    }

    /// Fraction of the Nyquist rate captured in aggregate.
    pub fn effective_rate(&self) -> f64 {
        self.p as f64 / self.l as f64
    }

    /// Minimum Nyquist-stream length required to fill the matrix.
    pub fn required_input_len(&self) -> usize {
        let max_c = self.offsets.iter().copied().max().unwrap_or(0);
        (self.n - 1) * self.l + max_c + 1
    }

    /// Flattened observation dimension, 2PN.
    pub fn flat_dim(&self) -> usize {
        2 * self.p * self.n
    }
}

/// Normalization statistics recorded when an observation is z-scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// One satellite's real-valued 2P x N sub-Nyquist sample matrix.
#[derive(Debug, Clone)]
pub struct SatObservation {
    /// Rows 0..P hold real parts, rows P..2P imaginary parts.
    pub values: Array2<f64>,
    pub config: CosetConfig,
    pub normalized: bool,
    pub norm_stats: Option<NormStats>,
    pub channel: ChannelRealization,
}

impl SatObservation {
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }
}

/// Samples a received signal through the multi-coset front end.
///
/// Row `j` holds `x[n*L + c_j]` for `n = 0..N` (real part; row `j+P` the
/// imaginary part). Errors if the input stream is too short.
pub fn multicoset_sample(rx: &ReceivedSignal, cfg: &CosetConfig) -> Result<SatObservation> {
    let need = cfg.required_input_len();
    if rx.samples.len() < need {
        return Err(Error::InvalidArgument(format!(
            "input has {} samples, multi-coset needs {need}",
            rx.samples.len()
        )));
    }
    let mut values = Array2::<f64>::zeros((2 * cfg.p, cfg.n));
    for (j, &c) in cfg.offsets.iter().enumerate() {
        for n in 0..cfg.n {
            let s = rx.samples[n * cfg.l + c];
            values[(j, n)] = s.re;
            values[(j + cfg.p, n)] = s.im;
        }
    }
    Ok(SatObservation {
        values,
        config: cfg.clone(),
        normalized: false,
        norm_stats: None,
        channel: rx.channel.clone(),
    })
}

/// Z-scores the whole 2P x N matrix jointly and records (mean, std).
pub fn normalize(obs: &SatObservation) -> Result<SatObservation> {
    if obs.normalized {
        return Err(Error::InvalidArgument(
            "observation is already normalized".into(),
        ));
    }
    let n = obs.values.len() as f64;
    let mean = obs.values.sum() / n;
    let var = obs.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::DegenerateInput(
            "zero-variance observation cannot be normalized".into(),
        ));
    }
    let std = var.sqrt();
    let values = obs.values.mapv(|v| (v - mean) / std);
    Ok(SatObservation {
        values,
        config: obs.config.clone(),
        normalized: true,
        norm_stats: Some(NormStats { mean, std }),
        channel: obs.channel.clone(),
    })
}
