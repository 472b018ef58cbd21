//! Minimal dense-network machinery: tanh MLPs with hand-written backprop and
//! an Adam optimizer over flat parameter tensors. Sized for the small policy,
//! value, and forecast heads used here, not for general deep learning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Xavier-uniform initialization.
pub fn xavier<T: Scalar>(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> T {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    T::lit(rng.gen_range(-bound..=bound))
}

/// `y = W x + b`, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Linear<T: Scalar> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let w = (0..in_dim * out_dim)
            .map(|_| xavier(rng, in_dim, out_dim))
            .collect();
        Linear {
            w,
            b: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[T], out: &mut Vec<T>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += *wi * *xi;
            }
            out.push(acc);
        }
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(
        &self,
        x: &[T],
        grad_out: &[T],
        grad_w: &mut [T],
        grad_b: &mut [T],
    ) -> Vec<T> {
        let mut grad_x = vec![T::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let g = grad_out[o];
            grad_b[o] += g;
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let grad_row = &mut grad_w[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grad_row[i] += g * x[i];
                grad_x[i] += g * row[i];
            }
        }
        grad_x
    }
}

/// Fully connected network with tanh hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Mlp<T: Scalar> {
    pub layers: Vec<Linear<T>>,
}

/// Post-activation values per layer (`acts[0]` is the input).
pub struct MlpCache<T: Scalar> {
    pub acts: Vec<Vec<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[T]) -> (Vec<T>, MlpCache<T>) {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        let mut buf = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(acts.last().unwrap(), &mut buf);
            if i < last {
                for v in buf.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(buf.clone());
        }
        (acts.last().unwrap().clone(), MlpCache { acts })
    }

    /// Backprop from an output gradient; accumulates into `grads`.
    pub fn backward(&self, cache: &MlpCache<T>, grad_out: &[T], grads: &mut MlpGrads<T>) {
        let last = self.layers.len() - 1;
        let mut grad = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i < last {
                // undo tanh: cached activation is tanh(z)
                for (g, a) in grad.iter_mut().zip(&cache.acts[i + 1]) {
                    *g *= T::one() - *a * *a;
                }
            }
            grad = layer.backward(&cache.acts[i], &grad, &mut grads.w[i], &mut grads.b[i]);
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out
    }
}

/// Gradient buffers shaped like an [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads<T: Scalar> {
    pub w: Vec<Vec<T>>,
    pub b: Vec<Vec<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        MlpGrads {
            w: mlp.layers.iter().map(|l| vec![T::zero(); l.w.len()]).collect(),
            b: mlp.layers.iter().map(|l| vec![T::zero(); l.b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.w.iter_mut().chain(self.b.iter_mut()) {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn tensors(&self) -> Vec<&Vec<T>> {
        self.w.iter().chain(self.b.iter()).collect()
    }

    pub fn tensors_in_mlp_order(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::with_capacity(self.w.len() * 2);
        for i in 0..self.w.len() {
            out.push(&self.w[i]);
            out.push(&self.b[i]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AdamConfig<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig {
            lr: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// Adam over a fixed list of parameter tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Adam<T: Scalar> {
    pub cfg: AdamConfig<T>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: usize,
}

impl<T: Scalar> Adam<T> {
    pub fn for_shapes(shapes: &[usize], cfg: AdamConfig<T>) -> Self {
        Adam {
            cfg,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    /// One update; `params` and `grads` must match the construction shapes.
    pub fn step(&mut self, params: &mut [&mut Vec<T>], grads: &[&Vec<T>], lr: T) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let t = T::from_usize(self.t).unwrap();
        let bias1 = T::one() - self.cfg.beta1.powf(t);
        let bias2 = T::one() - self.cfg.beta2.powf(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.cfg.beta1 * m[i] + (T::one() - self.cfg.beta1) * gi;
                v[i] = self.cfg.beta2 * v[i] + (T::one() - self.cfg.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm<T: Scalar>(tensors: &mut [&mut Vec<T>], max_norm: T) {
    let mut sq = T::zero();
    for t in tensors.iter() {
        for v in t.iter() {
            sq += *v * *v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > T::zero() {
        let scale = max_norm / norm;
        for t in tensors.iter_mut() {
            for v in t.iter_mut() {
                *v *= scale;
            }
        }
    }
}
