//! Autoencoder compression of sampled observations.
//!
//! Two variants share one architecture (encoder 2PN -> K1 -> M, intermediate
//! M -> K2, decoder K2 -> 2PN, ReLU throughout):
//!
//! * the plain autoencoder, trained with MSE on clean embeddings, and
//! * the contrastive autoencoder, trained against embeddings corrupted by the
//!   downlink simulator, with a cosine term pulling the corrupted intermediate
//!   feature toward the clean one.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{relu, relu_backward, Adam, Linear, Schedule};
use crate::{derive_seed, tensorio, Error, Result};

/// Layer widths of the compressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressorDims {
    /// Flattened observation length, 2PN.
    pub input: usize,
    /// Encoder hidden width.
    pub k1: usize,
    /// Embedding length.
    pub m: usize,
    /// Intermediate feature width between embedding and decoder.
    pub k2: usize,
}

impl Default for CompressorDims {
    fn default() -> Self {
        CompressorDims {
            input: 6400,
            k1: 1600,
            m: 640,
            k2: 2048,
        }
    }
}

impl CompressorDims {
    pub fn compression_factor(&self) -> f64 {
        self.input as f64 / self.m as f64
    }
}

/// Two-layer encoder: w1 is K1 x 2PN, w2 is M x K1.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub l1: Linear,
    pub l2: Linear,
}

/// Intermediate layer plus decoder: w3 is K2 x M, wd is 2PN x K2.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub l3: Linear,
    pub ld: Linear,
}

/// Full compressor parameter set.
#[derive(Debug, Clone)]
pub struct CompressorParams {
    pub enc: EncoderParams,
    pub dec: DecoderParams,
    pub dims: CompressorDims,
}

impl CompressorParams {
    pub fn seeded(dims: CompressorDims, seed: u64) -> Self {
        CompressorParams {
            enc: EncoderParams {
                l1: Linear::seeded(dims.input, dims.k1, derive_seed(seed, "enc1", 0)),
                l2: Linear::seeded(dims.k1, dims.m, derive_seed(seed, "enc2", 0)),
            },
            dec: DecoderParams {
                l3: Linear::seeded(dims.m, dims.k2, derive_seed(seed, "mid", 0)),
                ld: Linear::seeded(dims.k2, dims.input, derive_seed(seed, "dec", 0)),
            },
            dims,
        }
    }

    pub fn zeros(dims: CompressorDims) -> Self {
        CompressorParams {
            enc: EncoderParams {
                l1: Linear::zeros(dims.input, dims.k1),
                l2: Linear::zeros(dims.k1, dims.m),
            },
            dec: DecoderParams {
                l3: Linear::zeros(dims.m, dims.k2),
                ld: Linear::zeros(dims.k2, dims.input),
            },
            dims,
        }
    }
}

/// The M-dimensional code transmitted over the downlink. Values are stored as
/// f32 because that is the unit the transport serializes; lost elements are
/// exactly zero and flagged in `loss_mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f32>,
    pub corrupted: bool,
    pub loss_mask: Vec<bool>,
}

impl Embedding {
    pub fn clean(values: Vec<f32>) -> Self {
        let n = values.len();
        Embedding {
            values,
            corrupted: false,
            loss_mask: vec![false; n],
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Decoder output, reshaped to 2P x N by consumers.
#[derive(Debug, Clone)]
pub struct RecoveredObservation {
    pub values: Vec<f64>,
    /// Whether the source embedding had lost packets.
    pub from_corrupted: bool,
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

/// z = ReLU(w2 . ReLU(w1 x + b1) + b2). Dim-checked against the params.
pub fn encode(x_flat: &[f64], p: &EncoderParams) -> Result<Embedding> {
    if x_flat.len() != p.l1.w.ncols() {
        return Err(Error::InvalidArgument(format!(
            "encode expects input length {}, got {}",
            p.l1.w.ncols(),
            x_flat.len()
        )));
    }
    let z = encode_batch(&row(x_flat), p);
    Ok(Embedding::clean(z.iter().map(|&v| v as f32).collect()))
}

/// Batched encoder forward used by training and evaluation.
pub fn encode_batch(x: &Array2<f64>, p: &EncoderParams) -> Array2<f64> {
    let h1 = relu(&p.l1.forward(x));
    relu(&p.l2.forward(&h1))
}

/// r = ReLU(w3 z + b3); x_hat = ReLU(wd r + bd). Returns the recovered
/// observation together with the intermediate feature r (the contrastive loss
/// needs it).
pub fn decode(z: &Embedding, p: &DecoderParams) -> Result<(RecoveredObservation, Vec<f64>)> {
    if z.values.len() != p.l3.w.ncols() {
        return Err(Error::InvalidArgument(format!(
            "decode expects embedding length {}, got {}",
            p.l3.w.ncols(),
            z.values.len()
        )));
    }
    let (xh, r) = decode_batch(&row(&z.as_f64()), p);
    Ok((
        RecoveredObservation {
            values: xh.iter().copied().collect(),
            from_corrupted: z.corrupted,
        },
        r.iter().copied().collect(),
    ))
}

/// Batched decoder forward; returns (x_hat, r).
pub fn decode_batch(z: &Array2<f64>, p: &DecoderParams) -> (Array2<f64>, Array2<f64>) {
    let r = relu(&p.l3.forward(z));
    let xh = relu(&p.ld.forward(&r));
    (xh, r)
}

/// Mean squared error over elements.
pub fn ae_loss(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "ae_loss needs equal non-empty lengths, got {} and {}",
            x.len(),
            x_hat.len()
        )));
    }
    Ok(x.iter()
        .zip(x_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64)
}

fn cosine(r: &[f64], r_hat: &[f64]) -> Result<f64> {
    let nr = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nh = r_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nr == 0.0 || nh == 0.0 {
        return Err(Error::UndefinedCosine(
            "zero-norm intermediate feature".into(),
        ));
    }
    let dot: f64 = r.iter().zip(r_hat.iter()).map(|(a, b)| a * b).sum();
    Ok(dot / (nr * nh))
}

/// Two-part contrastive loss: alpha1 * MSE(x, x_hat) + alpha2 * (1 - cos(r, r_hat)).
pub fn cae_loss(
    x: &[f64],
    x_hat: &[f64],
    r: &[f64],
    r_hat: &[f64],
    alpha1: f64,
    alpha2: f64,
) -> Result<f64> {
    if r.len() != r_hat.len() || r.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "cae_loss needs equal non-empty feature lengths, got {} and {}",
            r.len(),
            r_hat.len()
        )));
    }
    let mse = ae_loss(x, x_hat)?;
    let cos = cosine(r, r_hat)?;
    Ok(alpha1 * mse + alpha2 * (1.0 - cos))
}

/// Corruption operator injected by the caller: maps a clean embedding vector
/// to its corrupted counterpart plus the per-element loss mask. The downlink
/// module provides the packet-level implementation (which also applies the
/// f32 transport quantization).
pub type CorruptionOp<'a> =
    &'a (dyn Fn(&[f64], f64, u64) -> Result<(Vec<f64>, Vec<bool>)> + Sync);

/// Training configuration shared by both compressor variants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompressorTrainCfg {
    pub schedule: Schedule,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Per-batch corruption rate drawn uniformly from this range (CAE only).
    pub corrupt_rate_range: (f64, f64),
    pub init_seed: u64,
}

impl Default for CompressorTrainCfg {
    fn default() -> Self {
        CompressorTrainCfg {
            schedule: Schedule::default(),
            alpha1: 1.0,
            alpha2: 3.0,
            corrupt_rate_range: (0.0, 0.03),
            init_seed: 1,
        }
    }
}

struct BatchGrads {
    l1_w: Array2<f64>,
    l1_b: Array1<f64>,
    l2_w: Array2<f64>,
    l2_b: Array1<f64>,
    l3_w: Array2<f64>,
    l3_b: Array1<f64>,
    ld_w: Array2<f64>,
    ld_b: Array1<f64>,
    loss: f64,
}

/// Forward + backward for one batch.
///
/// When `corruption` is `Some`, the decoder consumes the corrupted branch
/// (r_hat from z_hat) and the cosine term compares it against the clean branch;
/// with `None` the clean path feeds the decoder and the cosine term vanishes
/// (plain autoencoder).
fn batch_grads(
    x: &Array2<f64>,
    params: &CompressorParams,
    corruption: Option<(CorruptionOp, f64, u64)>,
    alpha1: f64,
    alpha2: f64,
) -> Result<BatchGrads> {
    let b = x.nrows();
    let d = x.ncols();
    let bf = b as f64;

    let h1 = relu(&params.enc.l1.forward(x));
    let z = relu(&params.enc.l2.forward(&h1));

    // Corrupted branch: pass every row through the transport simulator.
    let (z_hat, keep) = match &corruption {
        Some((op, rate, seed)) => {
            let mut z_hat = Array2::<f64>::zeros(z.raw_dim());
            let mut keep = Array2::<f64>::zeros(z.raw_dim());
            for (i, zrow) in z.axis_iter(Axis(0)).enumerate() {
                let zvec: Vec<f64> = zrow.iter().copied().collect();
                let (values, mask) = op(&zvec, *rate, derive_seed(*seed, "drop", i as u64))?;
                for (j, &v) in values.iter().enumerate() {
                    z_hat[(i, j)] = v;
                    keep[(i, j)] = if mask[j] { 0.0 } else { 1.0 };
                }
            }
            (z_hat, keep)
        }
        None => (z.clone(), Array2::ones(z.raw_dim())),
    };

    let r = relu(&params.dec.l3.forward(&z));
    let r_hat = relu(&params.dec.l3.forward(&z_hat));
    let xh = relu(&params.dec.ld.forward(&r_hat));

    // Reconstruction term.
    let diff = &xh - x;
    let mse = diff.iter().map(|v| v * v).sum::<f64>() / (b * d) as f64;

    // Cosine term, one coefficient per sample. Norms are clamped so a dead
    // row cannot produce NaNs mid-training; the strict op-level loss still
    // rejects zero norms.
    let mut cos_sum = 0.0;
    let mut d_r = Array2::<f64>::zeros(r.raw_dim());
    let mut d_r_hat_cos = Array2::<f64>::zeros(r.raw_dim());
    if alpha2 != 0.0 {
        for i in 0..b {
            let ri = r.row(i);
            let hi = r_hat.row(i);
            let nr = ri.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let nh = hi.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let dot: f64 = ri.iter().zip(hi.iter()).map(|(a, c)| a * c).sum();
            let cos = dot / (nr * nh);
            cos_sum += cos;
            let scale = -alpha2 / bf;
            for j in 0..r.ncols() {
                d_r[(i, j)] = scale * (hi[j] / (nr * nh) - cos * ri[j] / (nr * nr));
                d_r_hat_cos[(i, j)] = scale * (ri[j] / (nr * nh) - cos * hi[j] / (nh * nh));
            }
        }
    }
    let loss = alpha1 * mse + alpha2 * (bf - cos_sum) / bf;

    // Backward.
    let d_xh = diff.mapv(|v| alpha1 * 2.0 * v / (b * d) as f64);
    let d_pre_d = relu_backward(&d_xh, &xh);
    let (ld_w, ld_b, d_r_hat_dec) = params.dec.ld.backward(&r_hat, &d_pre_d);

    let d_r_hat = &d_r_hat_dec + &d_r_hat_cos;
    let d_pre3_hat = relu_backward(&d_r_hat, &r_hat);
    let d_pre3 = relu_backward(&d_r, &r);

    let (l3_w_hat, l3_b_hat, d_z_hat) = params.dec.l3.backward(&z_hat, &d_pre3_hat);
    let (l3_w_clean, l3_b_clean, d_z_clean) = params.dec.l3.backward(&z, &d_pre3);
    let l3_w = &l3_w_hat + &l3_w_clean;
    let l3_b = &l3_b_hat + &l3_b_clean;

    // Zero-fill corruption backward: kept elements pass gradient through.
    let d_z = &d_z_clean + &(&d_z_hat * &keep);
    let d_pre2 = relu_backward(&d_z, &z);
    let (l2_w, l2_b, d_h1) = params.enc.l2.backward(&h1, &d_pre2);
    let d_pre1 = relu_backward(&d_h1, &h1);
    let (l1_w, l1_b, _) = params.enc.l1.backward(x, &d_pre1);

    Ok(BatchGrads {
        l1_w,
        l1_b,
        l2_w,
        l2_b,
        l3_w,
        l3_b,
        ld_w,
        ld_b,
        loss,
    })
}

fn apply_step(params: &mut CompressorParams, g: &BatchGrads, opt: &mut Adam, lr: f64) {
    let grads: Vec<&[f64]> = vec![
        g.l1_w.as_slice().unwrap(),
        g.l1_b.as_slice().unwrap(),
        g.l2_w.as_slice().unwrap(),
        g.l2_b.as_slice().unwrap(),
        g.l3_w.as_slice().unwrap(),
        g.l3_b.as_slice().unwrap(),
        g.ld_w.as_slice().unwrap(),
        g.ld_b.as_slice().unwrap(),
    ];
    let mut tensors: Vec<&mut [f64]> = vec![
        params.enc.l1.w.as_slice_mut().unwrap(),
        params.enc.l1.b.as_slice_mut().unwrap(),
        params.enc.l2.w.as_slice_mut().unwrap(),
        params.enc.l2.b.as_slice_mut().unwrap(),
        params.dec.l3.w.as_slice_mut().unwrap(),
        params.dec.l3.b.as_slice_mut().unwrap(),
        params.dec.ld.w.as_slice_mut().unwrap(),
        params.dec.ld.b.as_slice_mut().unwrap(),
    ];
    opt.step(&mut tensors, &grads, lr);
}

fn adam_for(dims: &CompressorDims) -> Adam {
    Adam::new(&[
        dims.k1 * dims.input,
        dims.k1,
        dims.m * dims.k1,
        dims.m,
        dims.k2 * dims.m,
        dims.k2,
        dims.input * dims.k2,
        dims.input,
    ])
}

fn train_impl(
    data: &Array2<f64>,
    dims: CompressorDims,
    corruption: Option<CorruptionOp>,
    cfg: &CompressorTrainCfg,
) -> Result<(CompressorParams, Vec<f64>)> {
    if data.ncols() != dims.input {
        return Err(Error::InvalidArgument(format!(
            "dataset rows have {} features, dims.input is {}",
            data.ncols(),
            dims.input
        )));
    }
    if data.nrows() == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut params = CompressorParams::seeded(dims, cfg.init_seed);
    let mut opt = adam_for(&dims);
    let mut history = Vec::with_capacity(cfg.schedule.epochs);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut shuffle_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.init_seed, "shuffle", 0));
    let mut rate_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.init_seed, "rate", 0));

    for epoch in 1..=cfg.schedule.epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = cfg.schedule.lr_at(epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.schedule.batch_size).enumerate() {
            let x = ndarray::Array2::from_shape_fn((chunk.len(), dims.input), |(i, j)| {
                data[(chunk[i], j)]
            });
            let corr = corruption.map(|op| {
                let (lo, hi) = cfg.corrupt_rate_range;
                let rate = if hi > lo {
                    use rand::Rng;
                    rate_rng.gen_range(lo..hi)
                } else {
                    lo
                };
                let seed = derive_seed(cfg.init_seed, "batchdrop", (epoch * 100_000 + bi) as u64);
                (op, rate, seed)
            });
            let grads = batch_grads(&x, &params, corr, cfg.alpha1, cfg.alpha2)?;
            if !grads.loss.is_finite() {
                return Err(Error::TrainingFailure {
                    reason: format!("non-finite loss in epoch {epoch}"),
                    history,
                });
            }
            epoch_loss += grads.loss;
            batches += 1;
            apply_step(&mut params, &grads, &mut opt, lr);
        }
        history.push(epoch_loss / batches as f64);
    }
    Ok((params, history))
}

/// Trains the contrastive autoencoder. Every step corrupts the embedding
/// through the supplied downlink operator, decodes the corrupted branch, and
/// minimizes `alpha1 * MSE + alpha2 * (1 - cos(r, r_hat))`.
pub fn train_cae(
    data: &Array2<f64>,
    dims: CompressorDims,
    corruption: CorruptionOp,
    cfg: &CompressorTrainCfg,
) -> Result<(CompressorParams, Vec<f64>)> {
    train_impl(data, dims, Some(corruption), cfg)
}

/// Trains the plain autoencoder baseline: identical architecture, MSE only,
/// no corruption during training.
pub fn train_ae(
    data: &Array2<f64>,
    dims: CompressorDims,
    cfg: &CompressorTrainCfg,
) -> Result<(CompressorParams, Vec<f64>)> {
    let cfg = CompressorTrainCfg {
        alpha2: 0.0,
        ..*cfg
    };
    train_impl(data, dims, None, &cfg)
}

/// Checkpoint manifest written next to the parameter tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressorManifest {
    pub dims: CompressorDims,
    pub seed: u64,
    pub schedule: Schedule,
    pub alpha1: f64,
    pub alpha2: f64,
    pub loss_history: Vec<f64>,
    pub tensors: Vec<(String, Vec<usize>)>,
}

fn tensor_list(p: &CompressorParams) -> Vec<(&'static str, Vec<f64>, Vec<usize>)> {
    let two = |l: &Linear| (l.w.iter().copied().collect::<Vec<f64>>(), l.w.shape().to_vec());
    let (w1, s1) = two(&p.enc.l1);
    let (w2, s2) = two(&p.enc.l2);
    let (w3, s3) = two(&p.dec.l3);
    let (wd, sd) = two(&p.dec.ld);
    vec![
        ("w_e1", w1, s1),
        ("b_e1", p.enc.l1.b.to_vec(), vec![p.enc.l1.b.len()]),
        ("w_e2", w2, s2),
        ("b_e2", p.enc.l2.b.to_vec(), vec![p.enc.l2.b.len()]),
        ("w_3", w3, s3),
        ("b_3", p.dec.l3.b.to_vec(), vec![p.dec.l3.b.len()]),
        ("w_d", wd, sd),
        ("b_d", p.dec.ld.b.to_vec(), vec![p.dec.ld.b.len()]),
    ]
}

/// Saves a checkpoint: one f32 tensor file per parameter plus a manifest.
pub fn save_compressor<P: AsRef<Path>>(
    dir: P,
    params: &CompressorParams,
    cfg: &CompressorTrainCfg,
    history: &[f64],
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let tensors = tensor_list(params);
    for (name, values, _) in &tensors {
        tensorio::write_f32_from_f64(dir.join(format!("{name}.f32")), values)?;
    }
    tensorio::write_sidecar(
        dir.join("manifest.json"),
        &CompressorManifest {
            dims: params.dims,
            seed: cfg.init_seed,
            schedule: cfg.schedule,
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
            loss_history: history.to_vec(),
            tensors: tensors
                .iter()
                .map(|(n, _, s)| (n.to_string(), s.clone()))
                .collect(),
        },
    )
}

pub fn load_compressor<P: AsRef<Path>>(dir: P) -> Result<(CompressorParams, CompressorManifest)> {
    let dir = dir.as_ref();
    let manifest: CompressorManifest = tensorio::read_sidecar(dir.join("manifest.json"))?;
    let mut params = CompressorParams::zeros(manifest.dims);
    {
        let mut slots: Vec<(&str, &mut Linear)> = vec![
            ("w_e1", &mut params.enc.l1),
            ("w_e2", &mut params.enc.l2),
            ("w_3", &mut params.dec.l3),
            ("w_d", &mut params.dec.ld),
        ];
        for (name, layer) in slots.iter_mut() {
            let w = tensorio::read_f64(dir.join(format!("{name}.f32")))?;
            if w.len() != layer.w.len() {
                return Err(Error::CorruptStream(format!(
                    "checkpoint tensor {name} has {} values, expected {}",
                    w.len(),
                    layer.w.len()
                )));
            }
            layer.w = Array2::from_shape_vec(layer.w.raw_dim(), w)
                .map_err(|e| Error::CorruptStream(e.to_string()))?;
            let bname = name.replace('w', "b");
            let b = tensorio::read_f64(dir.join(format!("{bname}.f32")))?;
            if b.len() != layer.b.len() {
                return Err(Error::CorruptStream(format!(
                    "checkpoint tensor {bname} has {} values, expected {}",
                    b.len(),
                    layer.b.len()
                )));
            }
            layer.b = Array1::from_vec(b);
        }
    }
    Ok((params, manifest))
}
