//! Ablation sweeps: one axis varies, everything else stays at the configured
//! defaults. Every sweep point retrains the affected stages from the same
//! master seed, so each point reproduces from (config, seed).

use std::str::FromStr;

use super::config::{ExperimentConfig, SamplingMode, Split};
use super::dataset::{build_observation_set, scene_specs, ObservationSet};
use super::pipeline::{
    build_recovered_graphs, eval_fusion_tagged, train_cae_on, train_glss_on,
};
use super::report::{ResultRow, ResultsTable};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Heads,
    EmbeddingDim,
    NumSatellites,
    NumCosets,
    SamplingMode,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 5] = [
        AblationAxis::Heads,
        AblationAxis::EmbeddingDim,
        AblationAxis::NumSatellites,
        AblationAxis::NumCosets,
        AblationAxis::SamplingMode,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::Heads => "heads",
            AblationAxis::EmbeddingDim => "embedding_dim",
            AblationAxis::NumSatellites => "num_satellites",
            AblationAxis::NumCosets => "num_cosets",
            AblationAxis::SamplingMode => "sampling_mode",
        }
    }

    /// The swept values.
    pub fn head_values() -> [usize; 4] {
        [2, 4, 6, 8]
    }

    pub fn embedding_values() -> [usize; 2] {
        [200, 640]
    }

    pub fn satellite_values() -> [usize; 4] {
        [3, 5, 7, 10]
    }

    pub fn coset_values() -> [usize; 3] {
        [4, 6, 8]
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heads" => Ok(AblationAxis::Heads),
            "embedding_dim" => Ok(AblationAxis::EmbeddingDim),
            "num_satellites" => Ok(AblationAxis::NumSatellites),
            "num_cosets" => Ok(AblationAxis::NumCosets),
            "sampling_mode" => Ok(AblationAxis::SamplingMode),
            other => Err(Error::Config(format!(
                "unknown ablation axis '{other}' (expected heads, embedding_dim, num_satellites, num_cosets, sampling_mode)"
            ))),
        }
    }
}

fn default_train_set(cfg: &ExperimentConfig) -> Result<ObservationSet> {
    let coset = cfg.coset_config()?;
    let specs = scene_specs(cfg, Split::Train, cfg.train_scenes, None);
    build_observation_set(cfg, &coset, cfg.num_satellites, &specs)
}

/// Full arm retrain (compressor + classifier) for a modified config, then a
/// tagged evaluation sweep.
fn run_arm(cfg: &ExperimentConfig, tag: &str, table: &mut ResultsTable) -> Result<()> {
    let train = default_train_set(cfg)?;
    let (cae, _) = train_cae_on(cfg, &train)?;
    let graphs = build_recovered_graphs(cfg, &train, &cae)?;
    let (glss, _) = train_glss_on(cfg, &graphs)?;
    eval_fusion_tagged(cfg, &cae, &glss, tag, table)
}

/// Sweeps one axis, holding the rest of the configuration at its defaults.
/// Model names carry the sweep point, e.g. `cae+glss[heads=4]`.
pub fn ablate(cfg: &ExperimentConfig, axis: AblationAxis) -> Result<ResultsTable> {
    cfg.validate()?;
    let mut table = ResultsTable::default();
    match axis {
        AblationAxis::Heads => {
            // One compressor and one recovered dataset serve every head count.
            let train = default_train_set(cfg)?;
            let (cae, _) = train_cae_on(cfg, &train)?;
            let graphs = build_recovered_graphs(cfg, &train, &cae)?;
            for heads in AblationAxis::head_values() {
                let mut c = cfg.clone();
                c.heads = heads;
                let (glss, _) = train_glss_on(&c, &graphs)?;
                eval_fusion_tagged(&c, &cae, &glss, &format!("cae+glss[heads={heads}]"), &mut table)?;
            }
        }
        AblationAxis::EmbeddingDim => {
            for m in AblationAxis::embedding_values() {
                let mut c = cfg.clone();
                c.embedding_dim = m;
                c.validate()?;
                run_arm(&c, &format!("cae+glss[m={m}]"), &mut table)?;
                table.rows.push(ResultRow {
                    model: format!("cae[m={m}]"),
                    snr_db: 0.0,
                    loss_rate: 0.0,
                    num_signals: 0,
                    metric: "compression_factor".into(),
                    value: c.flat_dim() as f64 / m as f64,
                    seed: c.seed,
                });
            }
        }
        AblationAxis::NumSatellites => {
            for k in AblationAxis::satellite_values() {
                let mut c = cfg.clone();
                c.num_satellites = k;
                run_arm(&c, &format!("cae+glss[k={k}]"), &mut table)?;
            }
        }
        AblationAxis::NumCosets => {
            for p in AblationAxis::coset_values() {
                let mut c = cfg.clone();
                c.cosets = p;
                c.validate()?;
                run_arm(&c, &format!("cae+glss[cosets={p}]"), &mut table)?;
            }
        }
        AblationAxis::SamplingMode => {
            for mode in [SamplingMode::SubNyquist, SamplingMode::Nyquist] {
                let mut c = cfg.clone();
                c.sampling_mode = mode;
                let tag = match mode {
                    SamplingMode::SubNyquist => "cae+glss[mode=subnyquist]",
                    SamplingMode::Nyquist => "cae+glss[mode=nyquist]",
                };
                run_arm(&c, tag, &mut table)?;
            }
        }
    }
    Ok(table)
}
