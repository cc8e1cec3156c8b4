//! Shared neural-network plumbing: dense layers with hand-written backward
//! passes, activations, Adam, and the warmup + cosine-annealing schedule used
//! by every training loop in the pipeline.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Training schedule: Adam at `peak_lr` with a linear warmup over the first
/// `warmup_epochs` epochs and cosine annealing afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 30,
            batch_size: 128,
            peak_lr: 1e-3,
            warmup_epochs: 5,
        }
    }
}

impl Schedule {
    /// Learning rate for a 1-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let e = epoch.max(1);
        let w = self.warmup_epochs.max(1);
        if e <= w {
            return self.peak_lr * e as f64 / w as f64;
        }
        let decay_span = (self.epochs.saturating_sub(w) + 1) as f64;
        let progress = (e - w) as f64 / decay_span;
        self.peak_lr * 0.5 * (1.0 + (PI * progress.min(1.0)).cos())
    }
}

/// Dense layer, weights stored out_dim x in_dim.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Scaled-uniform fan-in init: U(-1/sqrt(in), 1/sqrt(in)), zero biases.
    pub fn seeded(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| rng.gen_range(-bound..bound));
        Linear {
            w,
            b: Array1::zeros(out_dim),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
        }
    }

    /// X (B x in) -> pre-activation (B x out).
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Gradients for `d_pre` (B x out) given the stored input `x`.
    /// Returns (d_w, d_b, d_x).
    pub fn backward(
        &self,
        x: &Array2<f64>,
        d_pre: &Array2<f64>,
    ) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
        let d_w = d_pre.t().dot(x);
        let d_b = d_pre.sum_axis(Axis(0));
        let d_x = d_pre.dot(&self.w);
        (d_w, d_b, d_x)
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// d_out masked by the activation's derivative, using the post-activation
/// values (post > 0 <=> pre > 0 almost everywhere).
pub fn relu_backward(d_out: &Array2<f64>, post: &Array2<f64>) -> Array2<f64> {
    let mut d = d_out.clone();
    d.zip_mut_with(post, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    d
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// ELU derivative expressed through the pre-activation value.
pub fn elu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_prime(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Adam optimizer over a fixed set of parameter tensors, addressed by index.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(tensor_lens: &[usize]) -> Self {
        Adam {
            m: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update step; `params[i]` and `grads[i]` must match the length
    /// registered at construction.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            assert_eq!(p.len(), m.len());
            assert_eq!(g.len(), m.len());
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Relative error used by gradient checks. The denominator is floored well
/// above the finite-difference noise floor (~1e-12 for unit-scale losses at
/// step 1e-5) so that near-zero gradients compare on absolute terms.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_cosine() {
        let s = Schedule {
            epochs: 30,
            batch_size: 128,
            peak_lr: 1e-3,
            warmup_epochs: 5,
        };
        assert!(s.lr_at(1) < s.lr_at(5));
        assert!((s.lr_at(5) - 1e-3).abs() < 1e-15);
        let mut prev = s.lr_at(5);
        for e in 6..=30 {
            let lr = s.lr_at(e);
            assert!(lr <= prev + 1e-15, "lr increased at epoch {e}");
            assert!(lr > 0.0);
            prev = lr;
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut layer = Linear::seeded(4, 3, 7);
        let x = Array2::from_shape_fn((2, 4), |(i, j)| 0.3 * (i as f64 + 1.0) - 0.2 * j as f64);
        // Loss = sum of squares of the pre-activation outputs.
        let loss = |l: &Linear| -> f64 { l.forward(&x).iter().map(|v| v * v).sum() };
        let y = layer.forward(&x);
        let d_pre = y.mapv(|v| 2.0 * v);
        let (d_w, d_b, _) = layer.backward(&x, &d_pre);

        let h = 1e-6;
        for idx in [(0, 0), (1, 2), (2, 3)] {
            let orig = layer.w[idx];
            layer.w[idx] = orig + h;
            let up = loss(&layer);
            layer.w[idx] = orig - h;
            let down = loss(&layer);
            layer.w[idx] = orig;
            let num = (up - down) / (2.0 * h);
            assert!(rel_err(num, d_w[idx]) < 1e-6, "dW mismatch at {idx:?}");
        }
        for i in 0..3 {
            let orig = layer.b[i];
            layer.b[i] = orig + h;
            let up = loss(&layer);
            layer.b[i] = orig - h;
            let down = loss(&layer);
            layer.b[i] = orig;
            let num = (up - down) / (2.0 * h);
            assert!(rel_err(num, d_b[i]) < 1e-6, "db mismatch at {i}");
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = vec![5.0f64, -3.0];
        let mut opt = Adam::new(&[2]);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|&v| 2.0 * v).collect();
            opt.step(&mut [&mut p], &[&g], 0.05);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2), "params {p:?}");
    }

    #[test]
    fn activation_derivatives() {
        for &x in &[-2.0, -0.5, 0.5, 2.0] {
            let h = 1e-7;
            let num = (elu(x + h) - elu(x - h)) / (2.0 * h);
            assert!(rel_err(num, elu_prime(x)) < 1e-5);
            let numl = (leaky_relu(x + h, 0.2) - leaky_relu(x - h, 0.2)) / (2.0 * h);
            assert!(rel_err(numl, leaky_relu_prime(x, 0.2)) < 1e-5);
        }
    }
}
