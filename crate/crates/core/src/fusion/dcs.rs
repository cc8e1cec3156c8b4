//! Deep cooperative sensing baseline: a fixed CNN over the concatenated
//! observations of all satellites, with no graph structure.
//!
//! Frozen architecture for fair comparison: the K x 2P x N stack is treated as
//! a K-channel image, passed through conv(16, 3x3, same, ReLU) -> maxpool 2x2
//! -> conv(32, 3x3, same, ReLU) -> maxpool 2x2 -> dense 256 (ReLU) ->
//! dense num_bands (sigmoid).

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{FusionTrainCfg, GraphSample, OccupancyPrediction};
use crate::nn::{relu, relu_backward, sigmoid, Adam, Linear};
use crate::{derive_seed, tensorio, Error, Result};

pub const CONV1_FILTERS: usize = 16;
pub const CONV2_FILTERS: usize = 32;
pub const FC_HIDDEN: usize = 256;

/// Input geometry and output width of the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DcsConfig {
    /// Satellites, used as input channels.
    pub k: usize,
    /// Image height, 2P.
    pub height: usize,
    /// Image width, N.
    pub width: usize,
    pub num_bands: usize,
}

impl DcsConfig {
    pub fn input_len(&self) -> usize {
        self.k * self.height * self.width
    }

    fn pooled1(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    fn pooled2(&self) -> (usize, usize) {
        let (h, w) = self.pooled1();
        (h / 2, w / 2)
    }

    fn flat_len(&self) -> usize {
        let (h, w) = self.pooled2();
        CONV2_FILTERS * h * w
    }
}

/// CNN parameters; conv kernels stored as (filters, in_channels*9).
#[derive(Debug, Clone)]
pub struct DcsModel {
    pub conv1_w: Array2<f64>,
    pub conv1_b: Array1<f64>,
    pub conv2_w: Array2<f64>,
    pub conv2_b: Array1<f64>,
    pub fc1: Linear,
    pub fc2: Linear,
    pub config: DcsConfig,
}

impl DcsModel {
    pub fn seeded(config: DcsConfig, seed: u64) -> Result<Self> {
        let (h2, w2) = config.pooled2();
        if h2 == 0 || w2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} too small for two 2x2 pools",
                config.height, config.width
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "dcs-conv", 0));
        use rand::Rng;
        let fan1 = config.k * 9;
        let b1 = 1.0 / (fan1 as f64).sqrt();
        let conv1_w = Array2::from_shape_fn((CONV1_FILTERS, fan1), |_| rng.gen_range(-b1..b1));
        let fan2 = CONV1_FILTERS * 9;
        let b2 = 1.0 / (fan2 as f64).sqrt();
        let conv2_w = Array2::from_shape_fn((CONV2_FILTERS, fan2), |_| rng.gen_range(-b2..b2));
        Ok(DcsModel {
            conv1_w,
            conv1_b: Array1::zeros(CONV1_FILTERS),
            conv2_w,
            conv2_b: Array1::zeros(CONV2_FILTERS),
            fc1: Linear::seeded(config.flat_len(), FC_HIDDEN, derive_seed(seed, "dcs-fc1", 0)),
            fc2: Linear::seeded(FC_HIDDEN, config.num_bands, derive_seed(seed, "dcs-fc2", 0)),
            config,
        })
    }
}

/// 3x3 same-padding im2col: (C, H, W) image -> (C*9) x (H*W) matrix.
fn im2col(img: &[f64], c: usize, h: usize, w: usize) -> Array2<f64> {
    let mut cols = Array2::zeros((c * 9, h * w));
    for ch in 0..c {
        for dy in 0..3usize {
            for dx in 0..3usize {
                let row = ch * 9 + dy * 3 + dx;
                for y in 0..h {
                    let sy = y as i64 + dy as i64 - 1;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as i64 + dx as i64 - 1;
                        if sx < 0 || sx >= w as i64 {
                            continue;
                        }
                        cols[(row, y * w + x)] = img[ch * h * w + sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add the column gradients back to the image.
fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut img = vec![0.0; c * h * w];
    for ch in 0..c {
        for dy in 0..3usize {
            for dx in 0..3usize {
                let row = ch * 9 + dy * 3 + dx;
                for y in 0..h {
                    let sy = y as i64 + dy as i64 - 1;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as i64 + dx as i64 - 1;
                        if sx < 0 || sx >= w as i64 {
                            continue;
                        }
                        img[ch * h * w + sy as usize * w + sx as usize] += cols[(row, y * w + x)];
                    }
                }
            }
        }
    }
    img
}

/// 2x2 stride-2 max pool (floor semantics). Returns pooled values and the
/// argmax index into the unpooled plane for the backward pass.
fn maxpool(x: &Array2<f64>, h: usize, w: usize) -> (Array2<f64>, Vec<usize>) {
    let f = x.nrows();
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Array2::zeros((f, h2 * w2));
    let mut arg = vec![0usize; f * h2 * w2];
    for fi in 0..f {
        for y in 0..h2 {
            for xo in 0..w2 {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (2 * y + dy) * w + (2 * xo + dx);
                        if x[(fi, idx)] > best {
                            best = x[(fi, idx)];
                            best_idx = idx;
                        }
                    }
                }
                out[(fi, y * w2 + xo)] = best;
                arg[fi * h2 * w2 + y * w2 + xo] = best_idx;
            }
        }
    }
    (out, arg)
}

struct SampleCache {
    cols1: Array2<f64>,
    a1: Array2<f64>,
    p1: Array2<f64>,
    arg1: Vec<usize>,
    cols2: Array2<f64>,
    a2: Array2<f64>,
    p2: Array2<f64>,
    arg2: Vec<usize>,
}

fn forward_sample(input: &[f64], m: &DcsModel) -> (Vec<f64>, SampleCache) {
    let c = &m.config;
    let cols1 = im2col(input, c.k, c.height, c.width);
    let a1 = relu(&(&m.conv1_w.dot(&cols1) + &m.conv1_b.view().insert_axis(ndarray::Axis(1))));
    let (p1, arg1) = maxpool(&a1, c.height, c.width);
    let (h1, w1) = c.pooled1();
    let p1_flat: Vec<f64> = p1.iter().copied().collect();
    let cols2 = im2col(&p1_flat, CONV1_FILTERS, h1, w1);
    let a2 = relu(&(&m.conv2_w.dot(&cols2) + &m.conv2_b.view().insert_axis(ndarray::Axis(1))));
    let (p2, arg2) = maxpool(&a2, h1, w1);
    let flat: Vec<f64> = p2.iter().copied().collect();
    (
        flat,
        SampleCache {
            cols1,
            a1,
            p1,
            arg1,
            cols2,
            a2,
            p2,
            arg2,
        },
    )
}

/// Sigmoid occupancy scores for one concatenated observation vector of length
/// K * 2P * N.
pub fn dcs_forward(concat: &[f64], m: &DcsModel) -> Result<OccupancyPrediction> {
    if concat.len() != m.config.input_len() {
        return Err(Error::InvalidArgument(format!(
            "input length {} does not match K*2P*N = {}",
            concat.len(),
            m.config.input_len()
        )));
    }
    let (flat, _) = forward_sample(concat, m);
    let x = Array2::from_shape_vec((1, flat.len()), flat).expect("flat shape");
    let h = relu(&m.fc1.forward(&x));
    let scores: Vec<f64> = m.fc2.forward(&h).row(0).iter().map(|&v| sigmoid(v)).collect();
    Ok(OccupancyPrediction::from_scores(scores))
}

struct DcsGrads {
    conv1_w: Array2<f64>,
    conv1_b: Array1<f64>,
    conv2_w: Array2<f64>,
    conv2_b: Array1<f64>,
    fc1_w: Array2<f64>,
    fc1_b: Array1<f64>,
    fc2_w: Array2<f64>,
    fc2_b: Array1<f64>,
    loss: f64,
}

fn batch_grads(inputs: &[&[f64]], labels: &Array2<f64>, m: &DcsModel) -> Result<DcsGrads> {
    let b = inputs.len();
    let c = &m.config;
    let (h1, w1) = c.pooled1();
    let (h2, w2) = c.pooled2();
    let nb = c.num_bands;

    let mut caches = Vec::with_capacity(b);
    let mut flat = Array2::zeros((b, c.flat_len()));
    for (i, input) in inputs.iter().enumerate() {
        let (f, cache) = forward_sample(input, m);
        for (j, v) in f.iter().enumerate() {
            flat[(i, j)] = *v;
        }
        caches.push(cache);
    }
    let hfc = relu(&m.fc1.forward(&flat));
    let scores = m.fc2.forward(&hfc).mapv(sigmoid);
    let diff = &scores - labels;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / (b * nb) as f64;

    let mut d_o = diff.mapv(|v| 2.0 * v / (b * nb) as f64);
    d_o.zip_mut_with(&scores, |g, &s| *g *= s * (1.0 - s));
    let (fc2_w, fc2_b, d_h) = m.fc2.backward(&hfc, &d_o);
    let d_pre_h = relu_backward(&d_h, &hfc);
    let (fc1_w, fc1_b, d_flat) = m.fc1.backward(&flat, &d_pre_h);

    let mut conv1_w = Array2::zeros(m.conv1_w.raw_dim());
    let mut conv1_b = Array1::zeros(CONV1_FILTERS);
    let mut conv2_w = Array2::zeros(m.conv2_w.raw_dim());
    let mut conv2_b = Array1::zeros(CONV2_FILTERS);

    for (i, cache) in caches.iter().enumerate() {
        // Unpool 2.
        let mut d_a2 = Array2::zeros(cache.a2.raw_dim());
        for f in 0..CONV2_FILTERS {
            for p in 0..h2 * w2 {
                let src = cache.arg2[f * h2 * w2 + p];
                d_a2[(f, src)] += d_flat[(i, f * h2 * w2 + p)];
            }
        }
        let _ = &cache.p2;
        let d_pre2 = relu_backward(&d_a2, &cache.a2);
        conv2_w += &d_pre2.dot(&cache.cols2.t());
        conv2_b += &d_pre2.sum_axis(ndarray::Axis(1));
        let d_cols2 = m.conv2_w.t().dot(&d_pre2);
        let d_p1_img = col2im(&d_cols2, CONV1_FILTERS, h1, w1);

        // Unpool 1.
        let mut d_a1 = Array2::zeros(cache.a1.raw_dim());
        for f in 0..CONV1_FILTERS {
            for p in 0..h1 * w1 {
                let src = cache.arg1[f * h1 * w1 + p];
                d_a1[(f, src)] += d_p1_img[f * h1 * w1 + p];
            }
        }
        let _ = &cache.p1;
        let d_pre1 = relu_backward(&d_a1, &cache.a1);
        conv1_w += &d_pre1.dot(&cache.cols1.t());
        conv1_b += &d_pre1.sum_axis(ndarray::Axis(1));
    }

    Ok(DcsGrads {
        conv1_w,
        conv1_b,
        conv2_w,
        conv2_b,
        fc1_w,
        fc1_b,
        fc2_w,
        fc2_b,
        loss,
    })
}

/// Trains the CNN baseline with the same loss and schedule as the graph
/// classifier. Graph samples are flattened in satellite order.
pub fn train_dcs(
    dataset: &[GraphSample],
    config: DcsConfig,
    cfg: &FusionTrainCfg,
) -> Result<(DcsModel, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    for (i, s) in dataset.iter().enumerate() {
        if s.x.nrows() != config.k || s.x.ncols() != config.height * config.width {
            return Err(Error::InvalidArgument(format!(
                "sample {i}: shape {:?} incompatible with K={} 2P={} N={}",
                s.x.shape(),
                config.k,
                config.height,
                config.width
            )));
        }
    }
    let mut model = DcsModel::seeded(config, cfg.init_seed)?;
    let mut opt = Adam::new(&[
        model.conv1_w.len(),
        model.conv1_b.len(),
        model.conv2_w.len(),
        model.conv2_b.len(),
        model.fc1.w.len(),
        model.fc1.b.len(),
        model.fc2.w.len(),
        model.fc2.b.len(),
    ]);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.init_seed, "dcs-shuffle", 0));
    let mut history = Vec::with_capacity(cfg.schedule.epochs);
    let flat_inputs: Vec<Vec<f64>> = dataset
        .iter()
        .map(|s| s.x.iter().copied().collect())
        .collect();

    for epoch in 1..=cfg.schedule.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.schedule.lr_at(epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.schedule.batch_size) {
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| flat_inputs[i].as_slice()).collect();
            let mut y = Array2::zeros((chunk.len(), config.num_bands));
            for (bi, &idx) in chunk.iter().enumerate() {
                for (c, &v) in dataset[idx].label.iter().enumerate() {
                    y[(bi, c)] = v;
                }
            }
            let g = batch_grads(&inputs, &y, &model)?;
            if !g.loss.is_finite() {
                return Err(Error::TrainingFailure {
                    reason: format!("non-finite loss in epoch {epoch}"),
                    history,
                });
            }
            epoch_loss += g.loss;
            batches += 1;
            let grads: Vec<&[f64]> = vec![
                g.conv1_w.as_slice().unwrap(),
                g.conv1_b.as_slice().unwrap(),
                g.conv2_w.as_slice().unwrap(),
                g.conv2_b.as_slice().unwrap(),
                g.fc1_w.as_slice().unwrap(),
                g.fc1_b.as_slice().unwrap(),
                g.fc2_w.as_slice().unwrap(),
                g.fc2_b.as_slice().unwrap(),
            ];
            let mut tensors: Vec<&mut [f64]> = vec![
                model.conv1_w.as_slice_mut().unwrap(),
                model.conv1_b.as_slice_mut().unwrap(),
                model.conv2_w.as_slice_mut().unwrap(),
                model.conv2_b.as_slice_mut().unwrap(),
                model.fc1.w.as_slice_mut().unwrap(),
                model.fc1.b.as_slice_mut().unwrap(),
                model.fc2.w.as_slice_mut().unwrap(),
                model.fc2.b.as_slice_mut().unwrap(),
            ];
            opt.step(&mut tensors, &grads, lr);
        }
        history.push(epoch_loss / batches as f64);
    }
    Ok((model, history))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcsManifest {
    pub config: DcsConfig,
    pub seed: u64,
    pub loss_history: Vec<f64>,
}

pub fn save_dcs<P: AsRef<Path>>(
    dir: P,
    m: &DcsModel,
    cfg: &FusionTrainCfg,
    history: &[f64],
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    tensorio::write_f32_from_f64(dir.join("conv1_w.f32"), m.conv1_w.as_slice().unwrap())?;
    tensorio::write_f32_from_f64(dir.join("conv1_b.f32"), m.conv1_b.as_slice().unwrap())?;
    tensorio::write_f32_from_f64(dir.join("conv2_w.f32"), m.conv2_w.as_slice().unwrap())?;
    tensorio::write_f32_from_f64(dir.join("conv2_b.f32"), m.conv2_b.as_slice().unwrap())?;
    tensorio::write_f32_from_f64(dir.join("fc1_w.f32"), m.fc1.w.as_slice().unwrap())?;
    tensorio::write_f32_from_f64(dir.join("fc1_b.f32"), m.fc1.b.as_slice().unwrap())?;
    tensorio::write_f32_from_f64(dir.join("fc2_w.f32"), m.fc2.w.as_slice().unwrap())?;
    tensorio::write_f32_from_f64(dir.join("fc2_b.f32"), m.fc2.b.as_slice().unwrap())?;
    tensorio::write_sidecar(
        dir.join("manifest.json"),
        &DcsManifest {
            config: m.config,
            seed: cfg.init_seed,
            loss_history: history.to_vec(),
        },
    )
}

pub fn load_dcs<P: AsRef<Path>>(dir: P) -> Result<(DcsModel, DcsManifest)> {
    let dir = dir.as_ref();
    let manifest: DcsManifest = tensorio::read_sidecar(dir.join("manifest.json"))?;
    let mut m = DcsModel::seeded(manifest.config, manifest.seed)?;
    let fill2 = |name: &str, a: &mut Array2<f64>| -> Result<()> {
        let v = tensorio::read_f64(dir.join(name))?;
        if v.len() != a.len() {
            return Err(Error::CorruptStream(format!("tensor {name} wrong length")));
        }
        *a = Array2::from_shape_vec(a.raw_dim(), v).map_err(|e| Error::CorruptStream(e.to_string()))?;
        Ok(())
    };
    let fill1 = |name: &str, a: &mut Array1<f64>| -> Result<()> {
        let v = tensorio::read_f64(dir.join(name))?;
        if v.len() != a.len() {
            return Err(Error::CorruptStream(format!("tensor {name} wrong length")));
        }
        *a = Array1::from_vec(v);
        Ok(())
    };
    fill2("conv1_w.f32", &mut m.conv1_w)?;
    fill1("conv1_b.f32", &mut m.conv1_b)?;
    fill2("conv2_w.f32", &mut m.conv2_w)?;
    fill1("conv2_b.f32", &mut m.conv2_b)?;
    fill2("fc1_w.f32", &mut m.fc1.w)?;
    fill1("fc1_b.f32", &mut m.fc1.b)?;
    fill2("fc2_w.f32", &mut m.fc2.w)?;
    fill1("fc2_b.f32", &mut m.fc2.b)?;
    Ok((m, manifest))
}
