//! Ground-station fusion: a fully-connected sensing graph over the recovered
//! observations and a graph-attention classifier producing per-band occupancy
//! scores.
//!
//! The classifier chains Dense -> GAT -> GAT -> mean pool -> Dense. Attention
//! scores are `e_ij = a . [W h_i || W h_j]`, normalized with a softmax over
//! LeakyReLU(e) (slope 0.2) across the full neighborhood including the node
//! itself; aggregation applies ELU per head. Heads are combined by
//! concatenation between hidden layers so the layer widths chain as
//! 640 -> 256*6 -> 128*6; an averaging combine is available as a config switch.

pub mod dcs;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compressor::RecoveredObservation;
use crate::nn::{elu, elu_prime, leaky_relu, leaky_relu_prime, relu, relu_backward, sigmoid, Adam, Linear, Schedule};
use crate::{derive_seed, tensorio, Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Fully-connected K-node graph; node features are the recovered observations
/// stacked in satellite order. Every node's neighborhood is all nodes,
/// including itself.
#[derive(Debug, Clone)]
pub struct SensingGraph {
    pub x: Array2<f64>,
}

impl SensingGraph {
    pub fn num_nodes(&self) -> usize {
        self.x.nrows()
    }
}

/// Stacks recovered observations into a sensing graph. All vectors must share
/// one length and there must be at least two nodes.
pub fn build_graph(recovered: &[RecoveredObservation]) -> Result<SensingGraph> {
    if recovered.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a sensing graph needs at least 2 nodes, got {}",
            recovered.len()
        )));
    }
    let dim = recovered[0].values.len();
    for (i, r) in recovered.iter().enumerate() {
        if r.values.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "node {i} has {} features, node 0 has {dim}",
                r.values.len()
            )));
        }
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "node {i} has non-finite features"
            )));
        }
    }
    let mut x = Array2::zeros((recovered.len(), dim));
    for (i, r) in recovered.iter().enumerate() {
        for (j, &v) in r.values.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    Ok(SensingGraph { x })
}

/// How per-head outputs are merged into the layer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadCombine {
    Concat,
    Average,
}

/// One attention head: a shared projection and the two halves of the
/// attention vector over the concatenated pair [W h_i || W h_j].
#[derive(Debug, Clone)]
pub struct GatHead {
    pub w: Array2<f64>,
    pub a_src: Array1<f64>,
    pub a_dst: Array1<f64>,
}

/// A multi-head GAT layer.
#[derive(Debug, Clone)]
pub struct GatLayerParams {
    pub heads: Vec<GatHead>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub combine: HeadCombine,
    pub leaky_slope: f64,
}

impl GatLayerParams {
    pub fn seeded(in_dim: usize, out_dim: usize, heads: usize, combine: HeadCombine, seed: u64) -> Self {
        let heads = (0..heads)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gat-head", t as u64));
                use rand::Rng;
                let wb = 1.0 / (in_dim as f64).sqrt();
                let ab = 1.0 / (out_dim as f64).sqrt();
                GatHead {
                    w: Array2::from_shape_fn((out_dim, in_dim), |_| rng.gen_range(-wb..wb)),
                    a_src: Array1::from_shape_fn(out_dim, |_| rng.gen_range(-ab..ab)),
                    a_dst: Array1::from_shape_fn(out_dim, |_| rng.gen_range(-ab..ab)),
                }
            })
            .collect();
        GatLayerParams {
            heads,
            in_dim,
            out_dim,
            combine,
            leaky_slope: LEAKY_SLOPE,
        }
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Width of the combined layer output.
    pub fn combined_dim(&self) -> usize {
        match self.combine {
            HeadCombine::Concat => self.out_dim * self.heads.len(),
            HeadCombine::Average => self.out_dim,
        }
    }
}

/// Attention matrix of one head over a single graph's node features
/// (K x in_dim). Row i holds alpha_ij; every row sums to 1.
pub fn attention_coefficients(
    h: &Array2<f64>,
    layer: &GatLayerParams,
    head: usize,
) -> Result<Array2<f64>> {
    if h.ncols() != layer.in_dim {
        return Err(Error::InvalidArgument(format!(
            "features have dim {}, layer expects {}",
            h.ncols(),
            layer.in_dim
        )));
    }
    let t = layer
        .heads
        .get(head)
        .ok_or_else(|| Error::InvalidArgument(format!("head {head} out of range")))?;
    let g = h.dot(&t.w.t());
    let s_src = g.dot(&t.a_src);
    let s_dst = g.dot(&t.a_dst);
    let k = h.nrows();
    let mut alpha = Array2::zeros((k, k));
    for i in 0..k {
        let mut row = vec![0.0; k];
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            let e = s_src[i] + s_dst[j];
            let v = leaky_relu(e, layer.leaky_slope);
            row[j] = v;
            max = max.max(v);
        }
        let mut denom = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for (j, v) in row.iter().enumerate() {
            alpha[(i, j)] = v / denom;
        }
    }
    Ok(alpha)
}

/// Full multi-head GAT layer forward for one graph: per head,
/// h_i' = ELU(sum_j alpha_ij W h_j); heads combined per the layer config.
pub fn gat_layer_forward(x: &Array2<f64>, layer: &GatLayerParams) -> Result<Array2<f64>> {
    let (out, _) = gat_forward_cached(x, x.nrows(), layer)?;
    Ok(out)
}

/// Cached per-head intermediates needed by the backward pass.
struct GatHeadCache {
    g: Array2<f64>,
    /// LeakyReLU input e_ij, rows grouped per graph.
    e: Array2<f64>,
    alpha: Array2<f64>,
    /// Pre-ELU aggregation.
    u: Array2<f64>,
}

struct GatCache {
    heads: Vec<GatHeadCache>,
    input: Array2<f64>,
    k: usize,
}

/// Forward over stacked graphs: `x` is (B*K) x in_dim with nodes of each graph
/// contiguous. Returns the combined output and the cache.
fn gat_forward_cached(
    x: &Array2<f64>,
    k: usize,
    layer: &GatLayerParams,
) -> Result<(Array2<f64>, GatCache)> {
    if x.ncols() != layer.in_dim {
        return Err(Error::InvalidArgument(format!(
            "features have dim {}, layer expects {}",
            x.ncols(),
            layer.in_dim
        )));
    }
    if k < 1 || x.nrows() % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} node rows do not split into graphs of {k}",
            x.nrows()
        )));
    }
    let graphs = x.nrows() / k;
    let mut head_outputs = Vec::with_capacity(layer.heads.len());
    let mut caches = Vec::with_capacity(layer.heads.len());

    for t in &layer.heads {
        let g = x.dot(&t.w.t());
        let s_src = g.dot(&t.a_src);
        let s_dst = g.dot(&t.a_dst);
        let mut e = Array2::zeros((x.nrows(), k));
        let mut alpha = Array2::zeros((x.nrows(), k));
        let mut u = Array2::zeros((x.nrows(), layer.out_dim));
        for b in 0..graphs {
            let base = b * k;
            for i in 0..k {
                let mut max = f64::NEG_INFINITY;
                for j in 0..k {
                    let eij = s_src[base + i] + s_dst[base + j];
                    e[(base + i, j)] = eij;
                    max = max.max(leaky_relu(eij, layer.leaky_slope));
                }
                let mut denom = 0.0;
                for j in 0..k {
                    let v = (leaky_relu(e[(base + i, j)], layer.leaky_slope) - max).exp();
                    alpha[(base + i, j)] = v;
                    denom += v;
                }
                for j in 0..k {
                    alpha[(base + i, j)] /= denom;
                }
            }
            // U_b = alpha_b . G_b
            for i in 0..k {
                for j in 0..k {
                    let a = alpha[(base + i, j)];
                    if a == 0.0 {
                        continue;
                    }
                    for c in 0..layer.out_dim {
                        u[(base + i, c)] += a * g[(base + j, c)];
                    }
                }
            }
        }
        let out = u.mapv(elu);
        head_outputs.push(out);
        caches.push(GatHeadCache { g, e, alpha, u });
    }

    let combined = match layer.combine {
        HeadCombine::Concat => {
            let mut out = Array2::zeros((x.nrows(), layer.out_dim * layer.heads.len()));
            for (t, ho) in head_outputs.iter().enumerate() {
                out.slice_mut(ndarray::s![.., t * layer.out_dim..(t + 1) * layer.out_dim])
                    .assign(ho);
            }
            out
        }
        HeadCombine::Average => {
            let mut out = Array2::zeros((x.nrows(), layer.out_dim));
            for ho in &head_outputs {
                out += ho;
            }
            out / layer.heads.len() as f64
        }
    };

    Ok((
        combined,
        GatCache {
            heads: caches,
            input: x.clone(),
            k,
        },
    ))
}

/// Per-head gradients of a GAT layer.
struct GatGrads {
    w: Vec<Array2<f64>>,
    a_src: Vec<Array1<f64>>,
    a_dst: Vec<Array1<f64>>,
}

fn gat_backward(
    layer: &GatLayerParams,
    cache: &GatCache,
    d_out: &Array2<f64>,
) -> (GatGrads, Array2<f64>) {
    let k = cache.k;
    let graphs = cache.input.nrows() / k;
    let mut d_input = Array2::zeros(cache.input.raw_dim());
    let mut grads = GatGrads {
        w: Vec::with_capacity(layer.heads.len()),
        a_src: Vec::with_capacity(layer.heads.len()),
        a_dst: Vec::with_capacity(layer.heads.len()),
    };

    for (t_idx, (head, hc)) in layer.heads.iter().zip(cache.heads.iter()).enumerate() {
        // Route the combined gradient back to this head.
        let d_head: Array2<f64> = match layer.combine {
            HeadCombine::Concat => d_out
                .slice(ndarray::s![.., t_idx * layer.out_dim..(t_idx + 1) * layer.out_dim])
                .to_owned(),
            HeadCombine::Average => d_out / layer.heads.len() as f64,
        };
        // Through the ELU.
        let mut d_u = d_head;
        d_u.zip_mut_with(&hc.u, |g, &pre| *g *= elu_prime(pre));

        let mut d_g = Array2::<f64>::zeros(hc.g.raw_dim());
        let mut d_a_src = Array1::<f64>::zeros(layer.out_dim);
        let mut d_a_dst = Array1::<f64>::zeros(layer.out_dim);
        let s_len = cache.input.nrows();
        let mut d_s_src = vec![0.0; s_len];
        let mut d_s_dst = vec![0.0; s_len];

        for b in 0..graphs {
            let base = b * k;
            // d_alpha = dU . G^T ; dG_agg = alpha^T . dU
            for i in 0..k {
                let mut d_alpha_row = vec![0.0; k];
                for j in 0..k {
                    let mut acc = 0.0;
                    for c in 0..layer.out_dim {
                        acc += d_u[(base + i, c)] * hc.g[(base + j, c)];
                    }
                    d_alpha_row[j] = acc;
                }
                // Softmax backward on row i.
                let mut dot = 0.0;
                for j in 0..k {
                    dot += d_alpha_row[j] * hc.alpha[(base + i, j)];
                }
                for j in 0..k {
                    let d_t = hc.alpha[(base + i, j)] * (d_alpha_row[j] - dot);
                    let d_e = d_t * leaky_relu_prime(hc.e[(base + i, j)], layer.leaky_slope);
                    d_s_src[base + i] += d_e;
                    d_s_dst[base + j] += d_e;
                }
            }
            // Aggregation term.
            for j in 0..k {
                for c in 0..layer.out_dim {
                    let mut acc = 0.0;
                    for i in 0..k {
                        acc += hc.alpha[(base + i, j)] * d_u[(base + i, c)];
                    }
                    d_g[(base + j, c)] += acc;
                }
            }
        }

        // Score chain: s_src = G a_src, s_dst = G a_dst.
        for n in 0..s_len {
            for c in 0..layer.out_dim {
                d_g[(n, c)] += d_s_src[n] * head.a_src[c] + d_s_dst[n] * head.a_dst[c];
                d_a_src[c] += d_s_src[n] * hc.g[(n, c)];
                d_a_dst[c] += d_s_dst[n] * hc.g[(n, c)];
            }
        }

        // Projection chain: G = X W^T.
        let d_w = d_g.t().dot(&cache.input);
        d_input += &d_g.dot(&head.w);
        grads.w.push(d_w);
        grads.a_src.push(d_a_src);
        grads.a_dst.push(d_a_dst);
    }

    (grads, d_input)
}

/// Architecture of the graph classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlssConfig {
    pub input_dim: usize,
    pub num_bands: usize,
    pub heads: usize,
    pub dense1_out: usize,
    pub gat1_out: usize,
    pub gat2_out: usize,
    pub combine: HeadCombine,
}

impl GlssConfig {
    /// Reference architecture: Dense(2PN, 640), GAT(640, 256, 6 heads),
    /// GAT(256*6, 128, 6 heads), Dense(128*6, num_bands).
    pub fn reference(input_dim: usize, num_bands: usize) -> Self {
        GlssConfig {
            input_dim,
            num_bands,
            heads: 6,
            dense1_out: 640,
            gat1_out: 256,
            gat2_out: 128,
            combine: HeadCombine::Concat,
        }
    }
}

/// The graph classifier: dense embedding, two GAT layers, mean pooling over
/// nodes, dense output with a sigmoid per band.
#[derive(Debug, Clone)]
pub struct GlssModel {
    pub dense1: Linear,
    pub gat1: GatLayerParams,
    pub gat2: GatLayerParams,
    pub dense2: Linear,
    pub config: GlssConfig,
}

impl GlssModel {
    pub fn seeded(config: GlssConfig, seed: u64) -> Self {
        let gat1 = GatLayerParams::seeded(
            config.dense1_out,
            config.gat1_out,
            config.heads,
            config.combine,
            derive_seed(seed, "gat1", 0),
        );
        let gat2 = GatLayerParams::seeded(
            gat1.combined_dim(),
            config.gat2_out,
            config.heads,
            config.combine,
            derive_seed(seed, "gat2", 0),
        );
        let dense2_in = gat2.combined_dim();
        GlssModel {
            dense1: Linear::seeded(config.input_dim, config.dense1_out, derive_seed(seed, "dense1", 0)),
            dense2: Linear::seeded(dense2_in, config.num_bands, derive_seed(seed, "dense2", 0)),
            gat1,
            gat2,
            config,
        }
    }
}

/// Per-band scores in [0, 1] and thresholded decisions.
#[derive(Debug, Clone)]
pub struct OccupancyPrediction {
    pub scores: Vec<f64>,
    pub decisions: Vec<bool>,
}

impl OccupancyPrediction {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let decisions = scores.iter().map(|&s| s >= DECISION_THRESHOLD).collect();
        OccupancyPrediction { scores, decisions }
    }
}

struct GlssCache {
    x: Array2<f64>,
    a1: Array2<f64>,
    gat1_cache: GatCache,
    gat2_cache: GatCache,
    a3: Array2<f64>,
    pooled: Array2<f64>,
    scores: Array2<f64>,
}

/// Forward over stacked graphs; `x` is (B*K) x input_dim.
fn glss_forward_cached(x: &Array2<f64>, k: usize, m: &GlssModel) -> Result<GlssCache> {
    if x.ncols() != m.config.input_dim {
        return Err(Error::InvalidArgument(format!(
            "graph features have dim {}, model expects {}",
            x.ncols(),
            m.config.input_dim
        )));
    }
    let a1 = relu(&m.dense1.forward(x));
    let (a2, gat1_cache) = gat_forward_cached(&a1, k, &m.gat1)?;
    let (a3, gat2_cache) = gat_forward_cached(&a2, k, &m.gat2)?;
    let graphs = x.nrows() / k;
    let mut pooled = Array2::zeros((graphs, a3.ncols()));
    for b in 0..graphs {
        for i in 0..k {
            for c in 0..a3.ncols() {
                pooled[(b, c)] += a3[(b * k + i, c)];
            }
        }
    }
    pooled /= k as f64;
    let scores = m.dense2.forward(&pooled).mapv(sigmoid);
    Ok(GlssCache {
        x: x.clone(),
        a1,
        gat1_cache,
        gat2_cache,
        a3,
        pooled,
        scores,
    })
}

/// Per-band occupancy prediction for one sensing graph.
pub fn glss_forward(g: &SensingGraph, m: &GlssModel) -> Result<OccupancyPrediction> {
    let cache = glss_forward_cached(&g.x, g.num_nodes(), m)?;
    Ok(OccupancyPrediction::from_scores(
        cache.scores.row(0).to_vec(),
    ))
}

/// Scores for a batch of same-size graphs, one row per graph.
pub fn glss_forward_batch(xs: &Array2<f64>, k: usize, m: &GlssModel) -> Result<Array2<f64>> {
    Ok(glss_forward_cached(xs, k, m)?.scores)
}

/// One labeled training sample: node features and per-band truth bits.
#[derive(Debug, Clone)]
pub struct GraphSample {
    pub x: Array2<f64>,
    pub label: Vec<f64>,
}

/// Training configuration for the graph classifier.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FusionTrainCfg {
    pub schedule: Schedule,
    pub init_seed: u64,
}

impl Default for FusionTrainCfg {
    fn default() -> Self {
        FusionTrainCfg {
            schedule: Schedule::default(),
            init_seed: 1,
        }
    }
}

struct GlssGrads {
    d1_w: Array2<f64>,
    d1_b: Array1<f64>,
    g1: GatGrads,
    g2: GatGrads,
    d2_w: Array2<f64>,
    d2_b: Array1<f64>,
    loss: f64,
}

fn glss_batch_grads(
    x: &Array2<f64>,
    labels: &Array2<f64>,
    k: usize,
    m: &GlssModel,
) -> Result<GlssGrads> {
    let cache = glss_forward_cached(x, k, m)?;
    let graphs = labels.nrows();
    let nb = labels.ncols();
    let diff = &cache.scores - labels;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / (graphs * nb) as f64;

    // MSE through the sigmoid.
    let mut d_o = diff.mapv(|v| 2.0 * v / (graphs * nb) as f64);
    d_o.zip_mut_with(&cache.scores, |g, &s| *g *= s * (1.0 - s));

    let (d2_w, d2_b, d_pooled) = m.dense2.backward(&cache.pooled, &d_o);

    // Mean pool: every node shares the graph gradient.
    let mut d_a3 = Array2::zeros(cache.a3.raw_dim());
    for b in 0..graphs {
        for i in 0..k {
            for c in 0..d_pooled.ncols() {
                d_a3[(b * k + i, c)] = d_pooled[(b, c)] / k as f64;
            }
        }
    }

    let (g2, d_a2) = gat_backward(&m.gat2, &cache.gat2_cache, &d_a3);
    let (g1, d_a1) = gat_backward(&m.gat1, &cache.gat1_cache, &d_a2);
    let d_pre1 = relu_backward(&d_a1, &cache.a1);
    let (d1_w, d1_b, _) = m.dense1.backward(&cache.x, &d_pre1);

    Ok(GlssGrads {
        d1_w,
        d1_b,
        g1,
        g2,
        d2_w,
        d2_b,
        loss,
    })
}

fn glss_tensor_lens(m: &GlssModel) -> Vec<usize> {
    let mut lens = vec![m.dense1.w.len(), m.dense1.b.len()];
    for layer in [&m.gat1, &m.gat2] {
        for h in &layer.heads {
            lens.push(h.w.len());
            lens.push(h.a_src.len());
            lens.push(h.a_dst.len());
        }
    }
    lens.push(m.dense2.w.len());
    lens.push(m.dense2.b.len());
    lens
}

fn glss_step(m: &mut GlssModel, g: &GlssGrads, opt: &mut Adam, lr: f64) {
    let mut grads: Vec<&[f64]> = vec![g.d1_w.as_slice().unwrap(), g.d1_b.as_slice().unwrap()];
    for gg in [&g.g1, &g.g2] {
        for t in 0..gg.w.len() {
            grads.push(gg.w[t].as_slice().unwrap());
            grads.push(gg.a_src[t].as_slice().unwrap());
            grads.push(gg.a_dst[t].as_slice().unwrap());
        }
    }
    grads.push(g.d2_w.as_slice().unwrap());
    grads.push(g.d2_b.as_slice().unwrap());

    let mut tensors: Vec<&mut [f64]> = vec![
        m.dense1.w.as_slice_mut().unwrap(),
        m.dense1.b.as_slice_mut().unwrap(),
    ];
    for layer in [&mut m.gat1, &mut m.gat2] {
        for h in &mut layer.heads {
            tensors.push(h.w.as_slice_mut().unwrap());
            tensors.push(h.a_src.as_slice_mut().unwrap());
            tensors.push(h.a_dst.as_slice_mut().unwrap());
        }
    }
    tensors.push(m.dense2.w.as_slice_mut().unwrap());
    tensors.push(m.dense2.b.as_slice_mut().unwrap());

    opt.step(&mut tensors, &grads, lr);
}

/// Trains the graph classifier with MSE against the truth bits: Adam at peak
/// 1e-3 after a 5-epoch linear warmup, cosine annealing afterwards.
pub fn train_glss(
    dataset: &[GraphSample],
    config: GlssConfig,
    cfg: &FusionTrainCfg,
) -> Result<(GlssModel, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty graph dataset".into()));
    }
    let k = dataset[0].x.nrows();
    for (i, s) in dataset.iter().enumerate() {
        if s.x.nrows() != k || s.x.ncols() != config.input_dim {
            return Err(Error::InvalidArgument(format!(
                "sample {i}: shape {:?} incompatible with K={k}, D={}",
                s.x.shape(),
                config.input_dim
            )));
        }
        if s.label.len() != config.num_bands {
            return Err(Error::InvalidArgument(format!(
                "sample {i}: label length {} != {}",
                s.label.len(),
                config.num_bands
            )));
        }
    }

    let mut model = GlssModel::seeded(config, cfg.init_seed);
    let mut opt = Adam::new(&glss_tensor_lens(&model));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.init_seed, "glss-shuffle", 0));
    let mut history = Vec::with_capacity(cfg.schedule.epochs);

    for epoch in 1..=cfg.schedule.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.schedule.lr_at(epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.schedule.batch_size) {
            let mut x = Array2::zeros((chunk.len() * k, config.input_dim));
            let mut y = Array2::zeros((chunk.len(), config.num_bands));
            for (bi, &idx) in chunk.iter().enumerate() {
                x.slice_mut(ndarray::s![bi * k..(bi + 1) * k, ..])
                    .assign(&dataset[idx].x);
                for (c, &v) in dataset[idx].label.iter().enumerate() {
                    y[(bi, c)] = v;
                }
            }
            let grads = glss_batch_grads(&x, &y, k, &model)?;
            if !grads.loss.is_finite() {
                return Err(Error::TrainingFailure {
                    reason: format!("non-finite loss in epoch {epoch}"),
                    history,
                });
            }
            epoch_loss += grads.loss;
            batches += 1;
            glss_step(&mut model, &grads, &mut opt, lr);
        }
        history.push(epoch_loss / batches as f64);
    }
    Ok((model, history))
}

/// Fraction of (sample, band) pairs where the decision equals the truth bit.
pub fn accuracy_metric(predictions: &[OccupancyPrediction], truths: &[Vec<bool>]) -> Result<f64> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "accuracy needs equal non-empty lengths, got {} and {}",
            predictions.len(),
            truths.len()
        )));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, t) in predictions.iter().zip(truths.iter()) {
        if p.decisions.len() != t.len() {
            return Err(Error::InvalidArgument(format!(
                "prediction has {} bands, truth has {}",
                p.decisions.len(),
                t.len()
            )));
        }
        for (d, b) in p.decisions.iter().zip(t.iter()) {
            if d == b {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlssManifest {
    pub config: GlssConfig,
    pub seed: u64,
    pub schedule: Schedule,
    pub loss_history: Vec<f64>,
}

/// Saves a GLSS checkpoint: per-tensor f32 files plus a manifest.
pub fn save_glss<P: AsRef<Path>>(
    dir: P,
    m: &GlssModel,
    cfg: &FusionTrainCfg,
    history: &[f64],
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let write2 = |name: &str, a: &Array2<f64>| -> Result<()> {
        tensorio::write_f32_from_f64(dir.join(format!("{name}.f32")), a.as_slice().unwrap())
    };
    let write1 = |name: &str, a: &Array1<f64>| -> Result<()> {
        tensorio::write_f32_from_f64(dir.join(format!("{name}.f32")), a.as_slice().unwrap())
    };
    write2("dense1_w", &m.dense1.w)?;
    write1("dense1_b", &m.dense1.b)?;
    for (li, layer) in [&m.gat1, &m.gat2].iter().enumerate() {
        for (t, h) in layer.heads.iter().enumerate() {
            write2(&format!("gat{}_h{}_w", li + 1, t), &h.w)?;
            write1(&format!("gat{}_h{}_a_src", li + 1, t), &h.a_src)?;
            write1(&format!("gat{}_h{}_a_dst", li + 1, t), &h.a_dst)?;
        }
    }
    write2("dense2_w", &m.dense2.w)?;
    write1("dense2_b", &m.dense2.b)?;
    tensorio::write_sidecar(
        dir.join("manifest.json"),
        &GlssManifest {
            config: m.config,
            seed: cfg.init_seed,
            schedule: cfg.schedule,
            loss_history: history.to_vec(),
        },
    )
}

pub fn load_glss<P: AsRef<Path>>(dir: P) -> Result<(GlssModel, GlssManifest)> {
    let dir = dir.as_ref();
    let manifest: GlssManifest = tensorio::read_sidecar(dir.join("manifest.json"))?;
    let mut m = GlssModel::seeded(manifest.config, manifest.seed);
    let read2 = |name: &str, a: &mut Array2<f64>| -> Result<()> {
        let v = tensorio::read_f64(dir.join(format!("{name}.f32")))?;
        if v.len() != a.len() {
            return Err(Error::CorruptStream(format!("tensor {name} has wrong length")));
        }
        *a = Array2::from_shape_vec(a.raw_dim(), v).map_err(|e| Error::CorruptStream(e.to_string()))?;
        Ok(())
    };
    let read1 = |name: &str, a: &mut Array1<f64>| -> Result<()> {
        let v = tensorio::read_f64(dir.join(format!("{name}.f32")))?;
        if v.len() != a.len() {
            return Err(Error::CorruptStream(format!("tensor {name} has wrong length")));
        }
        *a = Array1::from_vec(v);
        Ok(())
    };
    read2("dense1_w", &mut m.dense1.w)?;
    read1("dense1_b", &mut m.dense1.b)?;
    for (li, layer) in [&mut m.gat1, &mut m.gat2].into_iter().enumerate() {
        for (t, h) in layer.heads.iter_mut().enumerate() {
            read2(&format!("gat{}_h{}_w", li + 1, t), &mut h.w)?;
            read1(&format!("gat{}_h{}_a_src", li + 1, t), &mut h.a_src)?;
            read1(&format!("gat{}_h{}_a_dst", li + 1, t), &mut h.a_dst)?;
        }
    }
    read2("dense2_w", &mut m.dense2.w)?;
    read1("dense2_b", &mut m.dense2.b)?;
    Ok((m, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rel_err;
    use ndarray::Axis as NdAxis;
    use rand::Rng;

    fn obs(values: Vec<f64>) -> RecoveredObservation {
        RecoveredObservation {
            values,
            from_corrupted: false,
        }
    }

    fn random_features(k: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.5..1.5))
    }

    /// Brute-force single-graph reference: explicit loops over every node
    /// pair, computing the attention scores, softmax, aggregation and head
    /// combination directly from their definitions.
    fn oracle_gat_layer(x: &Array2<f64>, layer: &GatLayerParams) -> Array2<f64> {
        let k = x.nrows();
        let mut per_head: Vec<Array2<f64>> = Vec::new();
        for head in &layer.heads {
            // g_i = W h_i
            let mut g = Array2::zeros((k, layer.out_dim));
            for i in 0..k {
                for o in 0..layer.out_dim {
                    let mut acc = 0.0;
                    for c in 0..layer.in_dim {
                        acc += head.w[(o, c)] * x[(i, c)];
                    }
                    g[(i, o)] = acc;
                }
            }
            // e_ij = a . [g_i || g_j]
            let mut alpha = Array2::zeros((k, k));
            for i in 0..k {
                let mut exps = vec![0.0; k];
                for j in 0..k {
                    let mut e = 0.0;
                    for o in 0..layer.out_dim {
                        e += head.a_src[o] * g[(i, o)] + head.a_dst[o] * g[(j, o)];
                    }
                    let lre = if e >= 0.0 { e } else { layer.leaky_slope * e };
                    exps[j] = lre.exp();
                }
                let denom: f64 = exps.iter().sum();
                for j in 0..k {
                    alpha[(i, j)] = exps[j] / denom;
                }
            }
            // h_i' = ELU(sum_j alpha_ij g_j)
            let mut out = Array2::zeros((k, layer.out_dim));
            for i in 0..k {
                for o in 0..layer.out_dim {
                    let mut acc = 0.0;
                    for j in 0..k {
                        acc += alpha[(i, j)] * g[(j, o)];
                    }
                    out[(i, o)] = if acc > 0.0 { acc } else { acc.exp() - 1.0 };
                }
            }
            per_head.push(out);
        }
        match layer.combine {
            HeadCombine::Concat => {
                let mut out = Array2::zeros((k, layer.out_dim * per_head.len()));
                for (t, h) in per_head.iter().enumerate() {
                    for i in 0..k {
                        for o in 0..layer.out_dim {
                            out[(i, t * layer.out_dim + o)] = h[(i, o)];
                        }
                    }
                }
                out
            }
            HeadCombine::Average => {
                let mut out: Array2<f64> = Array2::zeros((k, layer.out_dim));
                for h in &per_head {
                    out += h;
                }
                out / per_head.len() as f64
            }
        }
    }

    /// End-to-end reference classifier composed from the oracle pieces.
    fn oracle_glss(x: &Array2<f64>, m: &GlssModel) -> Vec<f64> {
        let k = x.nrows();
        let mut a1 = Array2::zeros((k, m.config.dense1_out));
        for i in 0..k {
            for o in 0..m.config.dense1_out {
                let mut acc = m.dense1.b[o];
                for c in 0..m.config.input_dim {
                    acc += m.dense1.w[(o, c)] * x[(i, c)];
                }
                a1[(i, o)] = acc.max(0.0);
            }
        }
        let a2 = oracle_gat_layer(&a1, &m.gat1);
        let a3 = oracle_gat_layer(&a2, &m.gat2);
        let mut pooled = vec![0.0; a3.ncols()];
        for i in 0..k {
            for c in 0..a3.ncols() {
                pooled[c] += a3[(i, c)] / k as f64;
            }
        }
        (0..m.config.num_bands)
            .map(|o| {
                let mut acc = m.dense2.b[o];
                for c in 0..pooled.len() {
                    acc += m.dense2.w[(o, c)] * pooled[c];
                }
                1.0 / (1.0 + (-acc).exp())
            })
            .collect()
    }

    fn toy_config() -> GlssConfig {
        GlssConfig {
            input_dim: 6,
            num_bands: 4,
            heads: 2,
            dense1_out: 5,
            gat1_out: 4,
            gat2_out: 3,
            combine: HeadCombine::Concat,
        }
    }

    #[test]
    fn build_graph_stacks_in_order() {
        let g = build_graph(&[
            obs(vec![1.0, 2.0]),
            obs(vec![3.0, 4.0]),
            obs(vec![5.0, 6.0]),
        ])
        .unwrap();
        assert_eq!(g.x.shape(), &[3, 2]);
        assert_eq!(g.x[(1, 0)], 3.0);
        // Permuting inputs permutes rows identically.
        let p = build_graph(&[
            obs(vec![3.0, 4.0]),
            obs(vec![1.0, 2.0]),
            obs(vec![5.0, 6.0]),
        ])
        .unwrap();
        assert_eq!(p.x.row(0), g.x.row(1));
        assert_eq!(p.x.row(1), g.x.row(0));
    }

    #[test]
    fn build_graph_validates_inputs() {
        assert!(build_graph(&[obs(vec![1.0])]).is_err());
        assert!(build_graph(&[obs(vec![1.0]), obs(vec![1.0, 2.0])]).is_err());
        assert!(build_graph(&[obs(vec![1.0]), obs(vec![f64::NAN])]).is_err());
        assert!(build_graph(&[obs(vec![1.0]), obs(vec![2.0])]).is_ok());
    }

    #[test]
    fn identical_features_give_uniform_attention() {
        let layer = GatLayerParams::seeded(4, 3, 2, HeadCombine::Concat, 5);
        let row = [0.3, -0.7, 1.1, 0.0];
        let x = Array2::from_shape_fn((5, 4), |(_, j)| row[j]);
        for head in 0..2 {
            let alpha = attention_coefficients(&x, &layer, head).unwrap();
            for v in alpha.iter() {
                assert!((v - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        for seed in 0..20u64 {
            let layer = GatLayerParams::seeded(6, 4, 3, HeadCombine::Concat, seed);
            let x = random_features(4, 6, seed ^ 0x55);
            for head in 0..3 {
                let alpha = attention_coefficients(&x, &layer, head).unwrap();
                for row in alpha.axis_iter(NdAxis(0)) {
                    let s: f64 = row.sum();
                    assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
                }
            }
        }
    }

    #[test]
    fn attention_matches_exhaustive_pairwise_oracle() {
        let layer = GatLayerParams::seeded(5, 3, 2, HeadCombine::Concat, 9);
        let x = random_features(3, 5, 10);
        for head_idx in 0..2 {
            let alpha = attention_coefficients(&x, &layer, head_idx).unwrap();
            let head = &layer.heads[head_idx];
            let g = x.dot(&head.w.t());
            for i in 0..3 {
                let mut exps = vec![0.0; 3];
                for j in 0..3 {
                    let mut e = 0.0;
                    for o in 0..3 {
                        e += head.a_src[o] * g[(i, o)] + head.a_dst[o] * g[(j, o)];
                    }
                    let lre = if e >= 0.0 { e } else { 0.2 * e };
                    exps[j] = lre.exp();
                }
                let denom: f64 = exps.iter().sum();
                for j in 0..3 {
                    assert!(
                        (alpha[(i, j)] - exps[j] / denom).abs() < 1e-10,
                        "mismatch at ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn single_node_identity_projection_reduces_to_elu() {
        // One node with a self-loop: alpha_ii = 1, so h' = ELU(W h) = ELU(h)
        // when W is the identity.
        let mut layer = GatLayerParams::seeded(3, 3, 1, HeadCombine::Concat, 1);
        layer.heads[0].w = Array2::eye(3);
        let x = ndarray::arr2(&[[0.5, -1.2, 0.0]]);
        let out = gat_layer_forward(&x, &layer).unwrap();
        for (o, &v) in out.row(0).iter().zip(x.row(0).iter()) {
            assert!((o - elu(v)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_heads_produce_identical_blocks() {
        let mut layer = GatLayerParams::seeded(4, 3, 2, HeadCombine::Concat, 3);
        layer.heads[1] = layer.heads[0].clone();
        let x = random_features(4, 4, 8);
        let out = gat_layer_forward(&x, &layer).unwrap();
        for i in 0..4 {
            for o in 0..3 {
                assert_eq!(out[(i, o)].to_bits(), out[(i, 3 + o)].to_bits());
            }
        }
    }

    #[test]
    fn gat_layer_matches_oracle_both_combines() {
        for combine in [HeadCombine::Concat, HeadCombine::Average] {
            let layer = GatLayerParams::seeded(5, 4, 3, combine, 21);
            let x = random_features(4, 5, 22);
            let fast = gat_layer_forward(&x, &layer).unwrap();
            let slow = oracle_gat_layer(&x, &layer);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn glss_forward_matches_composed_oracle() {
        let m = GlssModel::seeded(toy_config(), 31);
        let x = random_features(4, 6, 32);
        let g = SensingGraph { x: x.clone() };
        let fast = glss_forward(&g, &m).unwrap();
        let slow = oracle_glss(&x, &m);
        for (a, b) in fast.scores.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(fast.scores.len(), 4);
        for (&s, &d) in fast.scores.iter().zip(fast.decisions.iter()) {
            assert!((0.0..=1.0).contains(&s));
            assert_eq!(d, s >= 0.5);
        }
    }

    #[test]
    fn reference_dims_chain_as_configured() {
        let cfg = GlssConfig::reference(6400, 40);
        assert_eq!(cfg.heads, 6);
        let gat1 = GatLayerParams::seeded(640, 256, 6, HeadCombine::Concat, 0);
        assert_eq!(gat1.combined_dim(), 1536);
        let gat2 = GatLayerParams::seeded(1536, 128, 6, HeadCombine::Concat, 0);
        assert_eq!(gat2.combined_dim(), 768);
    }

    #[test]
    fn permutation_invariance_of_scores() {
        let m = GlssModel::seeded(toy_config(), 41);
        let x = random_features(5, 6, 42);
        let g = SensingGraph { x: x.clone() };
        let base = glss_forward(&g, &m).unwrap();
        let perms: [[usize; 5]; 3] = [[4, 3, 2, 1, 0], [1, 0, 3, 4, 2], [2, 4, 0, 1, 3]];
        for perm in perms {
            let mut px = Array2::zeros(x.raw_dim());
            for (dst, &src) in perm.iter().enumerate() {
                px.row_mut(dst).assign(&x.row(src));
            }
            let p = glss_forward(&SensingGraph { x: px }, &m).unwrap();
            for (a, b) in base.scores.iter().zip(p.scores.iter()) {
                assert!((a - b).abs() < 1e-6, "permutation changed scores");
            }
        }
    }

    #[test]
    fn glss_gradients_match_finite_differences() {
        let cfg = toy_config();
        let model = GlssModel::seeded(cfg, 51);
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let k = 3;
        let graphs = 2;
        let x = Array2::from_shape_fn((graphs * k, cfg.input_dim), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((graphs, cfg.num_bands), |_| {
            if rng.gen::<bool>() {
                1.0
            } else {
                0.0
            }
        });
        let g = glss_batch_grads(&x, &y, k, &model).unwrap();
        let eval = |m: &GlssModel| glss_batch_grads(&x, &y, k, m).unwrap().loss;

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut m = model.clone();
        let mut probe = |analytic: f64, set: &dyn Fn(&mut GlssModel, f64), get: f64, m: &mut GlssModel| {
            set(m, get + h);
            let up = eval(m);
            set(m, get - h);
            let down = eval(m);
            set(m, get);
            let num = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(num, analytic));
        };

        for &(i, j) in &[(0usize, 0usize), (4, 5), (2, 3)] {
            let v = m.dense1.w[(i, j)];
            probe(g.d1_w[(i, j)], &move |q, val| q.dense1.w[(i, j)] = val, v, &mut m);
        }
        for i in 0..cfg.dense1_out {
            let v = m.dense1.b[i];
            probe(g.d1_b[i], &move |q, val| q.dense1.b[i] = val, v, &mut m);
        }
        for t in 0..cfg.heads {
            for &(i, j) in &[(0usize, 0usize), (3, 4)] {
                let v = m.gat1.heads[t].w[(i, j)];
                probe(
                    g.g1.w[t][(i, j)],
                    &move |q, val| q.gat1.heads[t].w[(i, j)] = val,
                    v,
                    &mut m,
                );
            }
            for c in 0..cfg.gat1_out {
                let v = m.gat1.heads[t].a_src[c];
                probe(
                    g.g1.a_src[t][c],
                    &move |q, val| q.gat1.heads[t].a_src[c] = val,
                    v,
                    &mut m,
                );
                let v = m.gat1.heads[t].a_dst[c];
                probe(
                    g.g1.a_dst[t][c],
                    &move |q, val| q.gat1.heads[t].a_dst[c] = val,
                    v,
                    &mut m,
                );
            }
            for &(i, j) in &[(0usize, 0usize), (2, 7)] {
                let v = m.gat2.heads[t].w[(i, j)];
                probe(
                    g.g2.w[t][(i, j)],
                    &move |q, val| q.gat2.heads[t].w[(i, j)] = val,
                    v,
                    &mut m,
                );
            }
            for c in 0..cfg.gat2_out {
                let v = m.gat2.heads[t].a_src[c];
                probe(
                    g.g2.a_src[t][c],
                    &move |q, val| q.gat2.heads[t].a_src[c] = val,
                    v,
                    &mut m,
                );
                let v = m.gat2.heads[t].a_dst[c];
                probe(
                    g.g2.a_dst[t][c],
                    &move |q, val| q.gat2.heads[t].a_dst[c] = val,
                    v,
                    &mut m,
                );
            }
        }
        for &(i, j) in &[(0usize, 0usize), (3, 5)] {
            let v = m.dense2.w[(i, j)];
            probe(g.d2_w[(i, j)], &move |q, val| q.dense2.w[(i, j)] = val, v, &mut m);
        }
        for i in 0..cfg.num_bands {
            let v = m.dense2.b[i];
            probe(g.d2_b[i], &move |q, val| q.dense2.b[i] = val, v, &mut m);
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn memorizes_a_tiny_dataset() {
        // 20 samples must be classified essentially perfectly within 200 epochs.
        let cfg = GlssConfig {
            input_dim: 12,
            num_bands: 6,
            heads: 2,
            dense1_out: 16,
            gat1_out: 8,
            gat2_out: 8,
            combine: HeadCombine::Concat,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let dataset: Vec<GraphSample> = (0..20)
            .map(|i| {
                let label: Vec<f64> = (0..6)
                    .map(|b| if (i + b) % 3 == 0 { 1.0 } else { 0.0 })
                    .collect();
                let x = Array2::from_shape_fn((3, 12), |(_, j)| {
                    label[j % 6] * 2.0 - 1.0 + rng.gen_range(-0.3..0.3)
                });
                GraphSample { x, label }
            })
            .collect();
        let train_cfg = FusionTrainCfg {
            schedule: Schedule {
                epochs: 200,
                batch_size: 10,
                peak_lr: 3e-3,
                warmup_epochs: 5,
            },
            init_seed: 62,
        };
        let (model, history) = train_glss(&dataset, cfg, &train_cfg).unwrap();
        assert_eq!(history.len(), 200);
        let preds: Vec<OccupancyPrediction> = dataset
            .iter()
            .map(|s| glss_forward(&SensingGraph { x: s.x.clone() }, &model).unwrap())
            .collect();
        let truths: Vec<Vec<bool>> = dataset
            .iter()
            .map(|s| s.label.iter().map(|&v| v > 0.5).collect())
            .collect();
        let acc = accuracy_metric(&preds, &truths).unwrap();
        assert!(acc > 0.99, "memorization accuracy {acc}");
    }

    #[test]
    fn accuracy_metric_oracle() {
        let p = |d: Vec<bool>| OccupancyPrediction {
            scores: d.iter().map(|&b| if b { 0.9 } else { 0.1 }).collect(),
            decisions: d,
        };
        // Perfect predictions.
        let preds = vec![p(vec![true, false]), p(vec![false, false])];
        let truths = vec![vec![true, false], vec![false, false]];
        assert_eq!(accuracy_metric(&preds, &truths).unwrap(), 1.0);
        // All-zero decisions against 2-of-40 occupied: 0.95.
        let preds = vec![p(vec![false; 40])];
        let mut t = vec![false; 40];
        t[3] = true;
        t[17] = true;
        assert!((accuracy_metric(&preds, &[t]).unwrap() - 0.95).abs() < 1e-12);
        // Nested-loop oracle on random data.
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let preds: Vec<OccupancyPrediction> = (0..13)
            .map(|_| p((0..9).map(|_| rng.gen::<bool>()).collect()))
            .collect();
        let truths: Vec<Vec<bool>> = (0..13)
            .map(|_| (0..9).map(|_| rng.gen::<bool>()).collect())
            .collect();
        let mut correct = 0;
        for i in 0..13 {
            for j in 0..9 {
                if preds[i].decisions[j] == truths[i][j] {
                    correct += 1;
                }
            }
        }
        let expect = correct as f64 / (13.0 * 9.0);
        assert!((accuracy_metric(&preds, &truths).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn glss_checkpoint_roundtrip() {
        let m = GlssModel::seeded(toy_config(), 81);
        let dir = std::env::temp_dir().join("cospec_glss_ckpt");
        save_glss(&dir, &m, &FusionTrainCfg::default(), &[0.3]).unwrap();
        let (back, manifest) = load_glss(&dir).unwrap();
        assert_eq!(manifest.config, m.config);
        let x = random_features(3, 6, 82);
        let a = glss_forward(&SensingGraph { x: x.clone() }, &m).unwrap();
        let b = glss_forward(&SensingGraph { x }, &back).unwrap();
        for (u, v) in a.scores.iter().zip(b.scores.iter()) {
            assert!((u - v).abs() < 1e-5);
        }
    }
}
