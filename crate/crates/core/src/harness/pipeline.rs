//! End-to-end pipeline: per-satellite channel -> multi-coset sampling ->
//! normalization -> encoding -> packetized lossy downlink -> decoding ->
//! graph fusion -> per-band decisions, evaluated against ground truth for
//! every model under identical seeds and drop patterns.

use ndarray::Array2;
use std::collections::BTreeMap;

use super::config::{ExperimentConfig, Split};
use super::dataset::{build_observation_set, scene_specs, ObservationSet, SceneRecord};
use super::report::{ResultRow, ResultsTable};
use crate::compressor::{
    decode_batch, encode_batch, train_ae, train_cae, CompressorParams, CompressorTrainCfg,
};
use crate::downlink::corrupt_values;
use crate::fusion::dcs::{dcs_forward, train_dcs, DcsConfig, DcsModel};
use crate::fusion::{accuracy_metric, train_glss, FusionTrainCfg, GlssModel, GraphSample};
use crate::stats::pearson;
use crate::{derive_seed, Error, Result};

/// MSE and Pearson correlation between a raw observation and its recovery.
pub fn recovery_metrics(x: &[f64], x_hat: &[f64]) -> Result<(f64, f64)> {
    let mse = crate::compressor::ae_loss(x, x_hat)?;
    let r = pearson(x, x_hat)?;
    Ok((mse, r))
}

/// The models a pipeline run evaluates. Baseline slots may stay empty.
#[derive(Default)]
pub struct ModelBundle {
    pub cae: Option<CompressorParams>,
    pub ae: Option<CompressorParams>,
    pub glss: Option<GlssModel>,
    pub dcs: Option<DcsModel>,
}

/// Drop-pattern seed for one (scene, satellite) pair. Model-independent by
/// construction: both compressors are corrupted with the same stream.
pub fn drop_seed(scene_seed: u64, sat: usize) -> u64 {
    derive_seed(scene_seed, "eval-drop", sat as u64)
}

/// Trains the contrastive compressor on an observation set.
pub fn train_cae_on(
    cfg: &ExperimentConfig,
    set: &ObservationSet,
) -> Result<(CompressorParams, Vec<f64>)> {
    let data = set.stacked();
    let tc = CompressorTrainCfg {
        schedule: cfg.compressor_schedule(),
        alpha1: cfg.alpha1,
        alpha2: cfg.alpha2,
        corrupt_rate_range: cfg.train_corrupt_range,
        init_seed: derive_seed(cfg.seed, "cae-init", 0),
    };
    train_cae(&data, cfg.compressor_dims(), &corrupt_values, &tc)
}

/// Trains the plain autoencoder baseline with identical seeds and schedule.
pub fn train_ae_on(
    cfg: &ExperimentConfig,
    set: &ObservationSet,
) -> Result<(CompressorParams, Vec<f64>)> {
    let data = set.stacked();
    let tc = CompressorTrainCfg {
        schedule: cfg.compressor_schedule(),
        alpha1: cfg.alpha1,
        alpha2: 0.0,
        corrupt_rate_range: (0.0, 0.0),
        init_seed: derive_seed(cfg.seed, "cae-init", 0),
    };
    train_ae(&data, cfg.compressor_dims(), &tc)
}

/// Runs one scene's observations through encode -> downlink -> decode and
/// returns the recovered K x 2PN matrix.
fn recover_scene(
    scene: &SceneRecord,
    compressor: &CompressorParams,
    loss_rate: f64,
) -> Result<Array2<f64>> {
    let k = scene.observations.len();
    let dim = scene.observations[0].len();
    let mut x = Array2::zeros((k, dim));
    for (i, obs) in scene.observations.iter().enumerate() {
        for (j, &v) in obs.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let z = encode_batch(&x, &compressor.enc);
    let m = z.ncols();
    let mut z_hat = Array2::zeros((k, m));
    for i in 0..k {
        let zrow: Vec<f64> = z.row(i).iter().copied().collect();
        let (vals, _mask) = corrupt_values(&zrow, loss_rate, drop_seed(scene.spec.seed, i))?;
        for (j, &v) in vals.iter().enumerate() {
            z_hat[(i, j)] = v;
        }
    }
    let (x_hat, _r) = decode_batch(&z_hat, &compressor.dec);
    Ok(x_hat)
}

/// Builds the fusion training set: every training scene is pushed through the
/// compressor and the lossy downlink (rates drawn from the configured list),
/// yielding recovered node features with the scene's truth bits as labels.
pub fn build_recovered_graphs(
    cfg: &ExperimentConfig,
    set: &ObservationSet,
    compressor: &CompressorParams,
) -> Result<Vec<GraphSample>> {
    let rates = &cfg.fusion_train_loss_rates;
    set.scenes
        .iter()
        .map(|scene| {
            let pick = derive_seed(scene.spec.seed, "fusion-rate", 0) as usize % rates.len();
            let x = recover_scene(scene, compressor, rates[pick])?;
            Ok(GraphSample {
                x,
                label: scene.truth.as_f64(),
            })
        })
        .collect()
}

/// Trains the graph classifier on recovered data.
pub fn train_glss_on(
    cfg: &ExperimentConfig,
    graphs: &[GraphSample],
) -> Result<(GlssModel, Vec<f64>)> {
    let tc = FusionTrainCfg {
        schedule: cfg.schedule,
        init_seed: derive_seed(cfg.seed, "glss-init", 0),
    };
    train_glss(graphs, cfg.glss_config(), &tc)
}

/// Trains the CNN baseline on the same recovered data.
pub fn train_dcs_on(
    cfg: &ExperimentConfig,
    graphs: &[GraphSample],
    k: usize,
) -> Result<(DcsModel, Vec<f64>)> {
    let tc = FusionTrainCfg {
        schedule: cfg.schedule,
        init_seed: derive_seed(cfg.seed, "dcs-init", 0),
    };
    let dcfg = DcsConfig {
        k,
        height: 2 * cfg.cosets,
        width: cfg.samples_per_coset,
        num_bands: cfg.grid.num_bands,
    };
    train_dcs(graphs, dcfg, &tc)
}

/// Per-(scene) evaluation product for one compressor at one loss rate.
struct RecoveredScene {
    x_hat: Array2<f64>,
    mse: f64,
    pearson: f64,
}

fn eval_compressor(
    scene: &SceneRecord,
    compressor: &CompressorParams,
    loss_rate: f64,
) -> Result<RecoveredScene> {
    let x_hat = recover_scene(scene, compressor, loss_rate)?;
    let mut mse_sum = 0.0;
    let mut r_sum = 0.0;
    let k = scene.observations.len();
    for (i, obs) in scene.observations.iter().enumerate() {
        let rec: Vec<f64> = x_hat.row(i).iter().copied().collect();
        let mse = crate::compressor::ae_loss(obs, &rec)?;
        // A fully-lost embedding decodes to a constant vector whose Pearson
        // coefficient is undefined; count it as zero similarity.
        let r = pearson(obs, &rec).unwrap_or(0.0);
        mse_sum += mse;
        r_sum += r;
    }
    Ok(RecoveredScene {
        x_hat,
        mse: mse_sum / k as f64,
        pearson: r_sum / k as f64,
    })
}

#[derive(Default, Clone, Copy)]
struct Agg {
    sum: f64,
    n: usize,
}

impl Agg {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Runs the full evaluation sweep: for every (SNR, loss-rate) cell the test
/// scenes flow through sampling, compression, the lossy downlink, recovery and
/// fusion; recovery metrics are logged per compressor and accuracy per fusion
/// model, split by signal count (plus a pooled row with `num_signals = 0`).
///
/// Every model sees identical scene seeds, channel draws and drop patterns.
pub fn run_pipeline(cfg: &ExperimentConfig, models: &ModelBundle) -> Result<ResultsTable> {
    cfg.validate()?;
    if models.cae.is_none() && models.ae.is_none() {
        return Err(Error::Config("no compressor checkpoint supplied".into()));
    }
    let coset = cfg.coset_config()?;
    let k = cfg.num_satellites;
    let mut table = ResultsTable::default();

    for &snr in &cfg.snr_grid_db {
        let specs = scene_specs(cfg, Split::Test, cfg.test_scenes, Some(snr));
        let set = build_observation_set(cfg, &coset, k, &specs)?;

        for &rate in &cfg.loss_rates {
            // metric values keyed by (model, num_signals), nsig 0 = pooled.
            let mut metrics: BTreeMap<(String, usize, &'static str), Agg> = BTreeMap::new();
            let mut fusion_inputs: Vec<(usize, Option<Array2<f64>>, Vec<bool>)> = Vec::new();

            for scene in &set.scenes {
                let nsig = scene.spec.num_signals;
                let mut cae_rec: Option<RecoveredScene> = None;
                if let Some(cae) = &models.cae {
                    let rec = eval_compressor(scene, cae, rate)?;
                    for &tag in &[0usize, nsig] {
                        metrics.entry(("cae".into(), tag, "mse")).or_default().push(rec.mse);
                        metrics
                            .entry(("cae".into(), tag, "pearson"))
                            .or_default()
                            .push(rec.pearson);
                    }
                    cae_rec = Some(rec);
                }
                if let Some(ae) = &models.ae {
                    let rec = eval_compressor(scene, ae, rate)?;
                    for &tag in &[0usize, nsig] {
                        metrics.entry(("ae".into(), tag, "mse")).or_default().push(rec.mse);
                        metrics
                            .entry(("ae".into(), tag, "pearson"))
                            .or_default()
                            .push(rec.pearson);
                    }
                }
                fusion_inputs.push((
                    nsig,
                    cae_rec.map(|r| r.x_hat),
                    scene.truth.bits.clone(),
                ));
            }

            // Fusion models consume the contrastive compressor's recoveries.
            if models.glss.is_some() || models.dcs.is_some() {
                for (nsig, x_hat, truth) in &fusion_inputs {
                    let x_hat = x_hat.as_ref().ok_or_else(|| {
                        Error::Config("fusion evaluation needs the cae checkpoint".into())
                    })?;
                    if let Some(glss) = &models.glss {
                        let pred = crate::fusion::glss_forward(
                            &crate::fusion::SensingGraph { x: x_hat.clone() },
                            glss,
                        )?;
                        let acc = accuracy_metric(&[pred], &[truth.clone()])?;
                        for &tag in &[0usize, *nsig] {
                            metrics
                                .entry(("cae+glss".into(), tag, "accuracy"))
                                .or_default()
                                .push(acc);
                        }
                    }
                    if let Some(dcs) = &models.dcs {
                        let flat: Vec<f64> = x_hat.iter().copied().collect();
                        let pred = dcs_forward(&flat, dcs)?;
                        let acc = accuracy_metric(&[pred], &[truth.clone()])?;
                        for &tag in &[0usize, *nsig] {
                            metrics
                                .entry(("cae+dcs".into(), tag, "accuracy"))
                                .or_default()
                                .push(acc);
                        }
                    }
                }
            }

            for ((model, nsig, metric), agg) in metrics {
                table.rows.push(ResultRow {
                    model,
                    snr_db: snr,
                    loss_rate: rate,
                    num_signals: nsig,
                    metric: metric.to_string(),
                    value: agg.mean(),
                    seed: cfg.seed,
                });
            }
        }
    }
    Ok(table)
}

/// Evaluates only the fusion stage on a prebuilt observation set (used by
/// ablations that retrain fusion models on shared data). Rows are tagged with
/// `model_tag`.
pub fn eval_fusion_tagged(
    cfg: &ExperimentConfig,
    compressor: &CompressorParams,
    glss: &GlssModel,
    model_tag: &str,
    table: &mut ResultsTable,
) -> Result<()> {
    let coset = cfg.coset_config()?;
    let k = cfg.num_satellites;
    for &snr in &cfg.snr_grid_db {
        let specs = scene_specs(cfg, Split::Test, cfg.test_scenes, Some(snr));
        let set = build_observation_set(cfg, &coset, k, &specs)?;
        for &rate in &cfg.loss_rates {
            let mut agg = Agg::default();
            for scene in &set.scenes {
                let x_hat = recover_scene(scene, compressor, rate)?;
                let pred = crate::fusion::glss_forward(
                    &crate::fusion::SensingGraph { x: x_hat },
                    glss,
                )?;
                agg.push(accuracy_metric(&[pred], &[scene.truth.bits.clone()])?);
            }
            table.rows.push(ResultRow {
                model: model_tag.to_string(),
                snr_db: snr,
                loss_rate: rate,
                num_signals: 0,
                metric: "accuracy".into(),
                value: agg.mean(),
                seed: cfg.seed,
            });
        }
    }
    Ok(())
}
