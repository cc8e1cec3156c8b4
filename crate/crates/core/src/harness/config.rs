//! Experiment configuration: one structured-text (TOML) file drives every
//! stage; presets cover the full desk-scale setup and a quick profile for CI.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::fusion::{GlssConfig, HeadCombine};
use crate::nn::Schedule;
use crate::sampler::CosetConfig;
use crate::scene::BandGrid;
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    SubNyquist,
    Nyquist,
}

/// Split tags; scene seeds are derived per split so the three sets stay
/// disjoint by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "scene/train",
            Split::Val => "scene/val",
            Split::Test => "scene/test",
        }
    }
}

fn default_combine() -> HeadCombine {
    HeadCombine::Concat
}

/// Widths of the graph classifier, overridable per profile.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GlssWidths {
    pub dense1_out: usize,
    pub gat1_out: usize,
    pub gat2_out: usize,
    #[serde(default = "default_combine")]
    pub combine: HeadCombine,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: BandGrid,
    /// Multi-coset front end: channel count, interval ratio, samples/channel.
    pub cosets: usize,
    pub interval_ratio: usize,
    pub samples_per_coset: usize,
    /// Seed for the frozen coset offset pattern.
    pub offset_seed: u64,
    pub sampling_mode: SamplingMode,
    pub num_satellites: usize,
    pub snr_grid_db: Vec<f64>,
    pub loss_rates: Vec<f64>,
    pub num_signals: Vec<usize>,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    pub schedule: Schedule,
    /// Compressor training epochs, when different from the shared schedule.
    pub compressor_epochs: Option<usize>,
    pub embedding_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub heads: usize,
    pub glss: GlssWidths,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Training-time corruption rate range for the contrastive compressor.
    pub train_corrupt_range: (f64, f64),
    /// Loss rates sampled when building the recovered training set for the
    /// fusion stage.
    pub fusion_train_loss_rates: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::full()
    }
}

impl ExperimentConfig {
    /// Full desk-scale profile: 10 satellites, 8 cosets of 400 samples,
    /// 8000/1000/1000 scenes, reference model widths.
    pub fn full() -> Self {
        ExperimentConfig {
            seed: 1,
            grid: BandGrid::default(),
            cosets: 8,
            interval_ratio: 16,
            samples_per_coset: 400,
            offset_seed: 7,
            sampling_mode: SamplingMode::SubNyquist,
            num_satellites: 10,
            snr_grid_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            loss_rates: vec![0.01, 0.02, 0.03],
            num_signals: vec![2, 3],
            train_scenes: 8000,
            val_scenes: 1000,
            test_scenes: 1000,
            schedule: Schedule {
                epochs: 30,
                batch_size: 128,
                peak_lr: 1e-3,
                warmup_epochs: 5,
            },
            compressor_epochs: None,
            embedding_dim: 640,
            encoder_hidden: 1600,
            decoder_hidden: 2048,
            heads: 6,
            glss: GlssWidths {
                dense1_out: 640,
                gat1_out: 256,
                gat2_out: 128,
                combine: HeadCombine::Concat,
            },
            alpha1: 1.0,
            alpha2: 3.0,
            train_corrupt_range: (0.0, 0.03),
            fusion_train_loss_rates: vec![0.01, 0.02, 0.03],
        }
    }

    /// Quick profile for CI: 5 satellites, 4 cosets of 100 samples, 2000
    /// scenes, scaled-down model widths (the compression factor stays 10x).
    pub fn quick() -> Self {
        ExperimentConfig {
            cosets: 4,
            samples_per_coset: 100,
            num_satellites: 5,
            train_scenes: 1600,
            val_scenes: 200,
            test_scenes: 200,
            schedule: Schedule {
                epochs: 30,
                batch_size: 128,
                peak_lr: 1e-3,
                warmup_epochs: 5,
            },
            compressor_epochs: Some(12),
            embedding_dim: 80,
            encoder_hidden: 256,
            decoder_hidden: 320,
            glss: GlssWidths {
                dense1_out: 160,
                gat1_out: 64,
                gat2_out: 32,
                combine: HeadCombine::Concat,
            },
            ..ExperimentConfig::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_grid_db.is_empty() || self.loss_rates.is_empty() || self.num_signals.is_empty()
        {
            return Err(Error::Config("all sweep grids must be non-empty".into()));
        }
        if self.num_satellites < 2 {
            return Err(Error::Config("need at least 2 satellites".into()));
        }
        if self.embedding_dim > self.flat_dim() {
            return Err(Error::Config(format!(
                "embedding dim {} exceeds observation dim {}",
                self.embedding_dim,
                self.flat_dim()
            )));
        }
        for &r in &self.loss_rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("loss rate {r} outside [0,1]")));
            }
        }
        self.coset_config().map(|_| ())
    }

    /// The frozen sampler configuration for the selected sampling mode.
    pub fn coset_config(&self) -> Result<CosetConfig> {
        match self.sampling_mode {
            SamplingMode::SubNyquist => CosetConfig::with_random_offsets(
                self.cosets,
                self.interval_ratio,
                self.samples_per_coset,
                derive_seed(self.offset_seed, "coset-offsets", 0),
            ),
            SamplingMode::Nyquist => CosetConfig::nyquist(self.cosets, self.samples_per_coset),
        }
    }

    /// Flattened observation dimension 2PN.
    pub fn flat_dim(&self) -> usize {
        2 * self.cosets * self.samples_per_coset
    }

    pub fn glss_config(&self) -> GlssConfig {
        GlssConfig {
            input_dim: self.flat_dim(),
            num_bands: self.grid.num_bands,
            heads: self.heads,
            dense1_out: self.glss.dense1_out,
            gat1_out: self.glss.gat1_out,
            gat2_out: self.glss.gat2_out,
            combine: self.glss.combine,
        }
    }

    pub fn compressor_dims(&self) -> crate::compressor::CompressorDims {
        crate::compressor::CompressorDims {
            input: self.flat_dim(),
            k1: self.encoder_hidden,
            m: self.embedding_dim,
            k2: self.decoder_hidden,
        }
    }

    pub fn compressor_schedule(&self) -> Schedule {
        Schedule {
            epochs: self.compressor_epochs.unwrap_or(self.schedule.epochs),
            ..self.schedule
        }
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
