//! Stacked LSTM with a linear head and hand-written backpropagation through
//! time. Gate order in the fused tensors is `[input, forget, cell, output]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::xavier;
use crate::scalar::Scalar;

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// One recurrent layer: fused gate weights `wx` (4h x in), `wh` (4h x h),
/// bias `b` (4h). Initial hidden and cell states are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LstmLayer<T: Scalar> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub wx: Vec<T>,
    pub wh: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> LstmLayer<T> {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let wx = (0..4 * hidden_dim * input_dim)
            .map(|_| xavier(rng, input_dim, hidden_dim))
            .collect();
        let wh = (0..4 * hidden_dim * hidden_dim)
            .map(|_| xavier(rng, hidden_dim, hidden_dim))
            .collect();
        // forget-gate bias starts at 1 so early training does not flush state
        let mut b = vec![T::zero(); 4 * hidden_dim];
        for v in b.iter_mut().skip(hidden_dim).take(hidden_dim) {
            *v = T::one();
        }
        LstmLayer {
            input_dim,
            hidden_dim,
            wx,
            wh,
            b,
        }
    }
}

/// Per-step intermediate values kept for BPTT.
#[derive(Debug, Clone)]
struct StepCache<T: Scalar> {
    gates: Vec<T>, // activated [i, f, g, o], length 4h
    c: Vec<T>,
    tanh_c: Vec<T>,
    h: Vec<T>,
}

/// Cache for one layer over a sequence.
#[derive(Debug, Clone)]
pub struct LayerCache<T: Scalar> {
    steps: Vec<StepCache<T>>,
    inputs: Vec<Vec<T>>,
}

/// Gradients shaped like one layer.
#[derive(Debug, Clone)]
pub struct LstmLayerGrads<T: Scalar> {
    pub wx: Vec<T>,
    pub wh: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> LstmLayer<T> {
    /// Run the layer over a sequence; returns hidden states per step.
    fn forward(&self, inputs: &[Vec<T>]) -> LayerCache<T> {
        let h_dim = self.hidden_dim;
        let mut h = vec![T::zero(); h_dim];
        let mut c = vec![T::zero(); h_dim];
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            debug_assert_eq!(x.len(), self.input_dim);
            let mut pre = self.b.clone();
            for (row, p) in pre.iter_mut().enumerate() {
                let wx_row = &self.wx[row * self.input_dim..(row + 1) * self.input_dim];
                for (w, xi) in wx_row.iter().zip(x) {
                    *p += *w * *xi;
                }
                let wh_row = &self.wh[row * h_dim..(row + 1) * h_dim];
                for (w, hi) in wh_row.iter().zip(&h) {
                    *p += *w * *hi;
                }
            }
            let mut gates = pre;
            for k in 0..h_dim {
                gates[k] = sigmoid(gates[k]); // input
                gates[h_dim + k] = sigmoid(gates[h_dim + k]); // forget
                gates[2 * h_dim + k] = gates[2 * h_dim + k].tanh(); // cell candidate
                gates[3 * h_dim + k] = sigmoid(gates[3 * h_dim + k]); // output
            }
            let mut c_new = vec![T::zero(); h_dim];
            let mut tanh_c = vec![T::zero(); h_dim];
            let mut h_new = vec![T::zero(); h_dim];
            for k in 0..h_dim {
                c_new[k] = gates[h_dim + k] * c[k] + gates[k] * gates[2 * h_dim + k];
                tanh_c[k] = c_new[k].tanh();
                h_new[k] = gates[3 * h_dim + k] * tanh_c[k];
            }
            steps.push(StepCache {
                gates,
                c: c_new.clone(),
                tanh_c,
                h: h_new.clone(),
            });
            h = h_new;
            c = c_new;
        }
        LayerCache {
            steps,
            inputs: inputs.to_vec(),
        }
    }

    /// BPTT over the cached sequence. `grad_h[t]` is the incoming hidden
    /// gradient per step; returns the gradient w.r.t. the layer inputs.
    fn backward(
        &self,
        cache: &LayerCache<T>,
        grad_h: &[Vec<T>],
        grads: &mut LstmLayerGrads<T>,
    ) -> Vec<Vec<T>> {
        let h_dim = self.hidden_dim;
        let steps = cache.steps.len();
        let mut grad_inputs = vec![vec![T::zero(); self.input_dim]; steps];
        let mut dh_next = vec![T::zero(); h_dim];
        let mut dc_next = vec![T::zero(); h_dim];
        for t in (0..steps).rev() {
            let s = &cache.steps[t];
            let c_prev: &[T] = if t == 0 {
                &[]
            } else {
                &cache.steps[t - 1].c
            };
            let h_prev: &[T] = if t == 0 {
                &[]
            } else {
                &cache.steps[t - 1].h
            };

            let mut da = vec![T::zero(); 4 * h_dim];
            let mut dc_prev = vec![T::zero(); h_dim];
            for k in 0..h_dim {
                let dh = grad_h[t][k] + dh_next[k];
                let i = s.gates[k];
                let f = s.gates[h_dim + k];
                let g = s.gates[2 * h_dim + k];
                let o = s.gates[3 * h_dim + k];
                let dc = dc_next[k] + dh * o * (T::one() - s.tanh_c[k] * s.tanh_c[k]);
                let do_ = dh * s.tanh_c[k];
                let di = dc * g;
                let dg = dc * i;
                let cp = if t == 0 { T::zero() } else { c_prev[k] };
                let df = dc * cp;
                dc_prev[k] = dc * f;
                da[k] = di * i * (T::one() - i);
                da[h_dim + k] = df * f * (T::one() - f);
                da[2 * h_dim + k] = dg * (T::one() - g * g);
                da[3 * h_dim + k] = do_ * o * (T::one() - o);
            }

            let x = &cache.inputs[t];
            let mut dh_prev = vec![T::zero(); h_dim];
            for row in 0..4 * h_dim {
                let g = da[row];
                grads.b[row] += g;
                let wx_row = row * self.input_dim;
                for i in 0..self.input_dim {
                    grads.wx[wx_row + i] += g * x[i];
                    grad_inputs[t][i] += g * self.wx[wx_row + i];
                }
                let wh_row = row * h_dim;
                for k in 0..h_dim {
                    if t > 0 {
                        grads.wh[wh_row + k] += g * h_prev[k];
                    }
                    dh_prev[k] += g * self.wh[wh_row + k];
                }
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        grad_inputs
    }
}

/// Stacked LSTM with a linear head on the final hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LstmStack<T: Scalar> {
    pub layers: Vec<LstmLayer<T>>,
    pub head_w: Vec<T>,
    pub head_b: Vec<T>,
    pub out_dim: usize,
}

/// Caches for each layer of one forward pass.
pub struct StackCache<T: Scalar> {
    layers: Vec<LayerCache<T>>,
}

/// Gradients shaped like an [`LstmStack`].
#[derive(Debug, Clone)]
pub struct LstmStackGrads<T: Scalar> {
    pub layers: Vec<LstmLayerGrads<T>>,
    pub head_w: Vec<T>,
    pub head_b: Vec<T>,
}

impl<T: Scalar> LstmStackGrads<T> {
    pub fn zeros_like(stack: &LstmStack<T>) -> Self {
        LstmStackGrads {
            layers: stack
                .layers
                .iter()
                .map(|l| LstmLayerGrads {
                    wx: vec![T::zero(); l.wx.len()],
                    wh: vec![T::zero(); l.wh.len()],
                    b: vec![T::zero(); l.b.len()],
                })
                .collect(),
            head_w: vec![T::zero(); stack.head_w.len()],
            head_b: vec![T::zero(); stack.head_b.len()],
        }
    }

    pub fn scale(&mut self, factor: T) {
        for l in self.layers.iter_mut() {
            for v in l.wx.iter_mut().chain(l.wh.iter_mut()).chain(l.b.iter_mut()) {
                *v *= factor;
            }
        }
        for v in self.head_w.iter_mut().chain(self.head_b.iter_mut()) {
            *v *= factor;
        }
    }

    pub fn tensors(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.wx);
            out.push(&l.wh);
            out.push(&l.b);
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for l in self.layers.iter_mut() {
            out.push(&mut l.wx);
            out.push(&mut l.wh);
            out.push(&mut l.b);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }
}

impl<T: Scalar> LstmStack<T> {
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        n_layers: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(n_layers >= 1);
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let in_dim = if l == 0 { input_dim } else { hidden_dim };
            layers.push(LstmLayer::new(in_dim, hidden_dim, rng));
        }
        let head_w = (0..out_dim * hidden_dim)
            .map(|_| xavier(rng, hidden_dim, out_dim))
            .collect();
        LstmStack {
            layers,
            head_w,
            head_b: vec![T::zero(); out_dim],
            out_dim,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim
    }

    pub fn forward(&self, seq: &[Vec<T>]) -> Vec<T> {
        self.forward_cached(seq).0
    }

    pub fn forward_cached(&self, seq: &[Vec<T>]) -> (Vec<T>, StackCache<T>) {
        assert!(!seq.is_empty(), "empty input sequence");
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut inputs: Vec<Vec<T>> = seq.to_vec();
        for layer in &self.layers {
            let cache = layer.forward(&inputs);
            inputs = cache.steps.iter().map(|s| s.h.clone()).collect();
            caches.push(cache);
        }
        let h_last = caches.last().unwrap().steps.last().unwrap().h.clone();
        let h_dim = self.hidden_dim();
        let mut out = self.head_b.clone();
        for (o, v) in out.iter_mut().enumerate() {
            let row = &self.head_w[o * h_dim..(o + 1) * h_dim];
            for (w, h) in row.iter().zip(&h_last) {
                *v += *w * *h;
            }
        }
        (out, StackCache { layers: caches })
    }

    pub fn backward(
        &self,
        cache: &StackCache<T>,
        grad_out: &[T],
        grads: &mut LstmStackGrads<T>,
    ) {
        let h_dim = self.hidden_dim();
        let steps = cache.layers[0].steps.len();
        let h_last = &cache.layers.last().unwrap().steps[steps - 1].h;

        // head
        let mut grad_h_top = vec![vec![T::zero(); h_dim]; steps];
        for (o, &g) in grad_out.iter().enumerate() {
            grads.head_b[o] += g;
            let row = o * h_dim;
            for k in 0..h_dim {
                grads.head_w[row + k] += g * h_last[k];
                grad_h_top[steps - 1][k] += g * self.head_w[row + k];
            }
        }

        // layers, top to bottom
        let mut grad_h = grad_h_top;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            grad_h = layer.backward(&cache.layers[li], &grad_h, &mut grads.layers[li]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn mse(out: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        let n = out.len() as f64;
        let loss = out
            .iter()
            .zip(target)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / n;
        let grad = out
            .iter()
            .zip(target)
            .map(|(o, t)| 2.0 * (o - t) / n)
            .collect();
        (loss, grad)
    }

    #[test]
    fn zero_weights_output_head_bias() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut stack = LstmStack::<f64>::new(2, 3, 2, 2, &mut rng);
        for layer in stack.layers.iter_mut() {
            for v in layer
                .wx
                .iter_mut()
                .chain(layer.wh.iter_mut())
                .chain(layer.b.iter_mut())
            {
                *v = 0.0;
            }
        }
        for v in stack.head_w.iter_mut() {
            *v = 0.0;
        }
        stack.head_b = vec![0.7, -0.3];
        let out = stack.forward(&[vec![1.0, -2.0], vec![0.5, 0.5]]);
        assert_eq!(out, vec![0.7, -0.3]);
    }

    #[test]
    fn doubling_head_weights_doubles_centered_output() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut stack = LstmStack::<f64>::new(2, 4, 2, 1, &mut rng);
        stack.head_b = vec![0.25];
        let seq = vec![vec![0.3, -0.4], vec![1.0, 0.2], vec![-0.6, 0.9]];
        let base = stack.forward(&seq)[0] - 0.25;
        for w in stack.head_w.iter_mut() {
            *w *= 2.0;
        }
        let doubled = stack.forward(&seq)[0] - 0.25;
        assert!((doubled - 2.0 * base).abs() < 1e-12);
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for case in 0..3 {
            let mut stack = LstmStack::<f64>::new(3, 4, 2, 2, &mut rng);
            let seq: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let target: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let (out, cache) = stack.forward_cached(&seq);
            let (_, grad_out) = mse(&out, &target);
            let mut grads = LstmStackGrads::zeros_like(&stack);
            stack.backward(&cache, &grad_out, &mut grads);
            let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().cloned().collect();

            let h = 1e-5;
            for ti in 0..analytic.len() {
                for i in 0..analytic[ti].len() {
                    let orig = {
                        let mut tensors = stack_tensors(&mut stack);
                        let v = tensors[ti][i];
                        tensors[ti][i] = v + h;
                        v
                    };
                    let (lp, _) = mse(&stack.forward(&seq), &target);
                    {
                        let mut tensors = stack_tensors(&mut stack);
                        tensors[ti][i] = orig - h;
                    }
                    let (lm, _) = mse(&stack.forward(&seq), &target);
                    {
                        let mut tensors = stack_tensors(&mut stack);
                        tensors[ti][i] = orig;
                    }
                    let numeric = (lp - lm) / (2.0 * h);
                    let a = analytic[ti][i];
                    let denom = a.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        ((a - numeric) / denom).abs() < 1e-4,
                        "case {case} tensor {ti} elem {i}: {a} vs {numeric}"
                    );
                }
            }
        }
    }

    fn stack_tensors(stack: &mut LstmStack<f64>) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in stack.layers.iter_mut() {
            out.push(&mut l.wx);
            out.push(&mut l.wh);
            out.push(&mut l.b);
        }
        out.push(&mut stack.head_w);
        out.push(&mut stack.head_b);
        out
    }
}
