//! Dataset construction: seeded scene specs, per-satellite observation builds,
//! and the on-disk tensor + sidecar container.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::config::{ExperimentConfig, Split};
use crate::sampler::{multicoset_sample, normalize, CosetConfig, NormStats};
use crate::scene::{
    apply_satellite_channel, generate_occupancy, synthesize_baseband, ChannelRealization,
    OccupancyTruth, WidebandScene,
};
use crate::{derive_seed, tensorio, Error, Result};

/// Everything needed to regenerate one scene deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub index: u64,
    pub seed: u64,
    pub mean_snr_db: f64,
    pub num_signals: usize,
}

/// Scene specs for a split. Training scenes draw their mean SNR uniformly from
/// the configured grid's span; evaluation scenes pin it via `fixed_snr`.
/// The signal count alternates through the configured list so the split stays
/// balanced.
pub fn scene_specs(
    cfg: &ExperimentConfig,
    split: Split,
    count: usize,
    fixed_snr: Option<f64>,
) -> Vec<SceneSpec> {
    let lo = cfg.snr_grid_db.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cfg
        .snr_grid_db
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (0..count as u64)
        .map(|i| {
            let seed = derive_seed(cfg.seed, split.tag(), i);
            let mean_snr_db = match fixed_snr {
                Some(s) => s,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mean-snr", 0));
                    if hi > lo {
                        rng.gen_range(lo..=hi)
                    } else {
                        lo
                    }
                }
            };
            SceneSpec {
                index: i,
                seed,
                mean_snr_db,
                num_signals: cfg.num_signals[(i as usize) % cfg.num_signals.len()],
            }
        })
        .collect()
}

/// One scene's worth of data after the satellite front end: normalized
/// flattened observations, channel draws and the truth bits.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub spec: SceneSpec,
    pub truth: OccupancyTruth,
    /// One flattened normalized 2PN vector per satellite.
    pub observations: Vec<Vec<f64>>,
    pub channels: Vec<ChannelRealization>,
    pub norm_stats: Vec<NormStats>,
}

/// A set of scene records sampled under one coset configuration.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub coset: CosetConfig,
    pub num_satellites: usize,
    pub scenes: Vec<SceneRecord>,
}

/// Regenerates a scene's composite baseband from its spec.
pub fn build_scene(cfg: &ExperimentConfig, spec: &SceneSpec, duration: usize) -> Result<WidebandScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "occupancy", 0));
    let truth = generate_occupancy(&cfg.grid, spec.num_signals, &mut rng)?;
    synthesize_baseband(&truth, &cfg.grid, duration, spec.seed)
}

fn build_record(
    cfg: &ExperimentConfig,
    coset: &CosetConfig,
    k: usize,
    spec: &SceneSpec,
) -> Result<SceneRecord> {
    let scene = build_scene(cfg, spec, coset.required_input_len())?;
    let mut observations = Vec::with_capacity(k);
    let mut channels = Vec::with_capacity(k);
    let mut norm_stats = Vec::with_capacity(k);
    for sat in 0..k {
        let ch = ChannelRealization::draw(spec.seed, sat, spec.mean_snr_db);
        let rx = apply_satellite_channel(&scene, &ch);
        let obs = multicoset_sample(&rx, coset)?;
        let normed = normalize(&obs)?;
        norm_stats.push(normed.norm_stats.expect("normalize sets stats"));
        observations.push(normed.flat());
        channels.push(ch);
    }
    Ok(SceneRecord {
        spec: *spec,
        truth: scene.truth,
        observations,
        channels,
        norm_stats,
    })
}

#[cfg(feature = "parallel")]
fn map_records(
    cfg: &ExperimentConfig,
    coset: &CosetConfig,
    k: usize,
    specs: &[SceneSpec],
) -> Result<Vec<SceneRecord>> {
    use rayon::prelude::*;
    specs
        .par_iter()
        .map(|s| build_record(cfg, coset, k, s))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn map_records(
    cfg: &ExperimentConfig,
    coset: &CosetConfig,
    k: usize,
    specs: &[SceneSpec],
) -> Result<Vec<SceneRecord>> {
    specs.iter().map(|s| build_record(cfg, coset, k, s)).collect()
}

/// Builds the full observation set for `specs` with `k` satellites per scene.
pub fn build_observation_set(
    cfg: &ExperimentConfig,
    coset: &CosetConfig,
    k: usize,
    specs: &[SceneSpec],
) -> Result<ObservationSet> {
    Ok(ObservationSet {
        coset: coset.clone(),
        num_satellites: k,
        scenes: map_records(cfg, coset, k, specs)?,
    })
}

impl ObservationSet {
    /// All observations stacked scene-major, satellite-minor: one row per
    /// (scene, satellite) pair. This is the compressor's training matrix.
    pub fn stacked(&self) -> Array2<f64> {
        let dim = self.coset.flat_dim();
        let rows = self.scenes.len() * self.num_satellites;
        let mut out = Array2::zeros((rows, dim));
        for (si, scene) in self.scenes.iter().enumerate() {
            for (sat, obs) in scene.observations.iter().enumerate() {
                for (j, &v) in obs.iter().enumerate() {
                    out[(si * self.num_satellites + sat, j)] = v;
                }
            }
        }
        out
    }
}

/// Sidecar for the on-disk observation container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationSidecar {
    pub grid: crate::scene::BandGrid,
    pub coset: CosetConfig,
    pub num_satellites: usize,
    pub shape: Vec<usize>,
    pub scenes: Vec<SceneMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMeta {
    pub spec: SceneSpec,
    pub truth_bits: Vec<bool>,
    pub channels: Vec<ChannelRealization>,
    pub norm_stats: Vec<NormStats>,
}

/// Writes `<base>.f32` with shape [scenes * K, 2P, N] row-major plus
/// `<base>.json` carrying grid, coset pattern, seeds, channel draws, truth
/// bits and normalization stats.
pub fn save_observation_set<P: AsRef<Path>>(
    base: P,
    cfg: &ExperimentConfig,
    set: &ObservationSet,
) -> Result<()> {
    let base = base.as_ref();
    let dim = set.coset.flat_dim();
    let mut flat: Vec<f64> = Vec::with_capacity(set.scenes.len() * set.num_satellites * dim);
    for scene in &set.scenes {
        for obs in &scene.observations {
            flat.extend_from_slice(obs);
        }
    }
    tensorio::write_f32_from_f64(base.with_extension("f32"), &flat)?;
    tensorio::write_sidecar(
        base.with_extension("json"),
        &ObservationSidecar {
            grid: cfg.grid.clone(),
            coset: set.coset.clone(),
            num_satellites: set.num_satellites,
            shape: vec![
                set.scenes.len() * set.num_satellites,
                2 * set.coset.p,
                set.coset.n,
            ],
            scenes: set
                .scenes
                .iter()
                .map(|s| SceneMeta {
                    spec: s.spec,
                    truth_bits: s.truth.bits.clone(),
                    channels: s.channels.clone(),
                    norm_stats: s.norm_stats.clone(),
                })
                .collect(),
        },
    )
}

/// Loads an observation container written by [`save_observation_set`].
/// Modulation metadata is not stored, so the truth carries bits only.
pub fn load_observation_set<P: AsRef<Path>>(base: P) -> Result<ObservationSet> {
    let base = base.as_ref();
    let side: ObservationSidecar = tensorio::read_sidecar(base.with_extension("json"))?;
    let flat = tensorio::read_f64(base.with_extension("f32"))?;
    let dim = side.coset.flat_dim();
    let expect = side.scenes.len() * side.num_satellites * dim;
    if flat.len() != expect {
        return Err(Error::CorruptStream(format!(
            "observation tensor holds {} floats, sidecar implies {expect}",
            flat.len()
        )));
    }
    let mut scenes = Vec::with_capacity(side.scenes.len());
    for (si, meta) in side.scenes.iter().enumerate() {
        let mut observations = Vec::with_capacity(side.num_satellites);
        for sat in 0..side.num_satellites {
            let start = (si * side.num_satellites + sat) * dim;
            observations.push(flat[start..start + dim].to_vec());
        }
        let truth = OccupancyTruth {
            bits: meta.truth_bits.clone(),
            mod_schemes: vec![None; meta.truth_bits.len()],
        };
        scenes.push(SceneRecord {
            spec: meta.spec,
            truth,
            observations,
            channels: meta.channels.clone(),
            norm_stats: meta.norm_stats.clone(),
        });
    }
    Ok(ObservationSet {
        coset: side.coset,
        num_satellites: side.num_satellites,
        scenes,
    })
}
