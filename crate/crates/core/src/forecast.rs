//! One-step-ahead (and N-step) forecasting of price, solar generation, and
//! non-shiftable load with a stacked LSTM, plus the 1-hour-lag baseline and
//! the evaluation metrics used to compare them.

use std::path::Path;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LoadSeries, Temporal};
use crate::error::{Error, Result};
use crate::lstm::{LstmStack, LstmStackGrads};
use crate::nn::{clip_global_norm, Adam, AdamConfig};
use crate::scalar::Scalar;

/// Sine-cosine encoding of a cyclic feature with period `f_max`.
pub fn encode_temporal<T: Scalar>(f: T, f_max: T) -> (T, T) {
    assert!(f_max > T::zero(), "f_max must be positive");
    let angle = T::lit(2.0) * T::pi() * f / f_max;
    (angle.cos(), angle.sin())
}

/// Calendar features of one hour: month, day-type, and hour each mapped onto
/// the unit circle. Layout: `[cos_m, sin_m, cos_d, sin_d, cos_h, sin_h]`.
pub fn temporal_features<T: Scalar>(k: Temporal) -> [T; 6] {
    let (cm, sm) = encode_temporal(T::lit(k.month as f64), T::lit(12.0));
    let (cd, sd) = encode_temporal(T::lit(k.day_type as f64), T::lit(7.0));
    let (ch, sh) = encode_temporal(T::lit(k.hour as f64), T::lit(24.0));
    [cm, sm, cd, sd, ch, sh]
}

pub const TEMPORAL_DIM: usize = 6;
/// Per-step LSTM input: the lagged value plus its calendar encoding.
pub const INPUT_DIM: usize = 1 + TEMPORAL_DIM;

/// Which signal a forecast model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecastTarget {
    Price,
    Solar,
    Nsl,
}

impl ForecastTarget {
    pub fn name(&self) -> &'static str {
        match self {
            ForecastTarget::Price => "price",
            ForecastTarget::Solar => "solar",
            ForecastTarget::Nsl => "nsl",
        }
    }
}

/// One training sample: `window` lagged observations (each with calendar
/// features) and the next `n_ahead` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSample<T: Scalar> {
    pub inputs: Vec<[T; INPUT_DIM]>,
    pub target: Vec<T>,
}

/// Sliding-window samples over a series; yields `m - o - n + 1` samples.
pub fn build_dataset<T: Scalar>(
    values: &[T],
    start: Temporal,
    window: usize,
    n_ahead: usize,
) -> Result<Vec<ForecastSample<T>>> {
    if window == 0 || n_ahead == 0 {
        return Err(Error::InvalidArgument(
            "window and horizon must be >= 1".into(),
        ));
    }
    if values.len() < window + n_ahead {
        return Err(Error::InvalidSeries(format!(
            "series of {} too short for window {window} + horizon {n_ahead}",
            values.len()
        )));
    }
    let count = values.len() - window - n_ahead + 1;
    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let mut inputs = Vec::with_capacity(window);
        for j in 0..window {
            let t = k + j;
            let mut row = [T::zero(); INPUT_DIM];
            row[0] = values[t];
            row[1..].copy_from_slice(&temporal_features::<T>(start.advance(t)));
            inputs.push(row);
        }
        samples.push(ForecastSample {
            inputs,
            target: values[k + window..k + window + n_ahead].to_vec(),
        });
    }
    Ok(samples)
}

pub const FORECAST_MODEL_VERSION: u32 = 1;

/// Trained forecaster: the LSTM stack plus the standardization statistics of
/// its training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ForecastModel<T: Scalar> {
    pub schema_version: u32,
    pub target: ForecastTarget,
    pub window: usize,
    pub n_ahead: usize,
    pub stack: LstmStack<T>,
    pub input_mean: Vec<T>,
    pub input_std: Vec<T>,
    pub target_mean: T,
    pub target_std: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ForecastTrainConfig<T: Scalar> {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: T,
    /// Multiplicative step-size decay applied once per epoch.
    pub lr_decay: T,
    pub clip_norm: T,
    pub seed: u64,
}

impl<T: Scalar> Default for ForecastTrainConfig<T> {
    fn default() -> Self {
        ForecastTrainConfig {
            hidden_dim: 50,
            n_layers: 2,
            epochs: 12,
            batch_size: 64,
            initial_lr: T::lit(1e-3),
            lr_decay: T::lit(0.95),
            clip_norm: T::lit(5.0),
            seed: 0,
        }
    }
}

const STD_FLOOR: f64 = 1e-6;

fn standardization<T: Scalar>(samples: &[ForecastSample<T>]) -> (Vec<T>, Vec<T>, T, T) {
    let mut in_mean = vec![T::zero(); INPUT_DIM];
    let mut in_sq = vec![T::zero(); INPUT_DIM];
    let mut t_mean = T::zero();
    let mut t_sq = T::zero();
    let mut n_in = T::zero();
    let mut n_t = T::zero();
    for s in samples {
        for row in &s.inputs {
            for (d, &v) in row.iter().enumerate() {
                in_mean[d] += v;
                in_sq[d] += v * v;
            }
            n_in += T::one();
        }
        for &v in &s.target {
            t_mean += v;
            t_sq += v * v;
            n_t += T::one();
        }
    }
    let floor = T::lit(STD_FLOOR);
    for d in 0..INPUT_DIM {
        in_mean[d] /= n_in;
        in_sq[d] = ((in_sq[d] / n_in - in_mean[d] * in_mean[d]).max(T::zero())).sqrt();
        if in_sq[d] < floor {
            in_sq[d] = floor;
        }
    }
    t_mean /= n_t;
    let mut t_std = ((t_sq / n_t - t_mean * t_mean).max(T::zero())).sqrt();
    if t_std < floor {
        t_std = floor;
    }
    (in_mean, in_sq, t_mean, t_std)
}

impl<T: Scalar> ForecastModel<T> {
    fn standardize_inputs(&self, sample: &ForecastSample<T>) -> Vec<Vec<T>> {
        sample
            .inputs
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(d, &v)| (v - self.input_mean[d]) / self.input_std[d])
                    .collect()
            })
            .collect()
    }

    /// Raw-scale predictions for one input window.
    pub fn predict(&self, sample: &ForecastSample<T>) -> Vec<T> {
        let seq = self.standardize_inputs(sample);
        self.stack
            .forward(&seq)
            .into_iter()
            .map(|z| z * self.target_std + self.target_mean)
            .collect()
    }

    /// One-step-ahead predictions over a whole series: entry `t` is the
    /// forecast of `values[t + 1]` made from the window ending at `t`.
    /// Until a full window is available the last observation is used.
    /// Windows are independent and evaluated in parallel.
    pub fn rolling_forecast(&self, values: &[T], start: Temporal) -> Vec<T> {
        use rayon::prelude::*;
        let o = self.window;
        (0..values.len())
            .into_par_iter()
            .map(|t| {
                if t + 1 < o {
                    return values[t];
                }
                let k = t + 1 - o;
                let mut inputs = Vec::with_capacity(o);
                for j in 0..o {
                    let idx = k + j;
                    let mut row = [T::zero(); INPUT_DIM];
                    row[0] = values[idx];
                    row[1..].copy_from_slice(&temporal_features::<T>(start.advance(idx)));
                    inputs.push(row);
                }
                self.predict(&ForecastSample {
                    inputs,
                    target: Vec::new(),
                })[0]
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Train a forecaster on sliding-window samples, minimizing the mean squared
/// error over the prediction horizon. Returns the model and the per-epoch
/// loss history (standardized scale). Aborts if the loss stops being finite.
pub fn train<T: Scalar>(
    target: ForecastTarget,
    samples: &[ForecastSample<T>],
    window: usize,
    n_ahead: usize,
    cfg: &ForecastTrainConfig<T>,
) -> Result<(ForecastModel<T>, Vec<T>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let stack = LstmStack::new(INPUT_DIM, cfg.hidden_dim, cfg.n_layers, n_ahead, &mut rng);
    let (input_mean, input_std, target_mean, target_std) = standardization(samples);
    let mut model = ForecastModel {
        schema_version: FORECAST_MODEL_VERSION,
        target,
        window,
        n_ahead,
        stack,
        input_mean,
        input_std,
        target_mean,
        target_std,
    };

    let shapes: Vec<usize> = LstmStackGrads::zeros_like(&model.stack)
        .tensors()
        .iter()
        .map(|t| t.len())
        .collect();
    let mut adam = Adam::for_shapes(&shapes, AdamConfig::default());

    let n = samples.len();
    let n_t = T::from_usize(n_ahead).unwrap();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.initial_lr * cfg.lr_decay.powi(epoch as i32);
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = LstmStackGrads::zeros_like(&model.stack);
            let mut batch_loss = T::zero();
            for &idx in chunk {
                let sample = &samples[idx];
                let seq = model.standardize_inputs(sample);
                let (out, cache) = model.stack.forward_cached(&seq);
                let mut grad_out = vec![T::zero(); n_ahead];
                for (j, (&o, &t_raw)) in out.iter().zip(&sample.target).enumerate() {
                    let t_std = (t_raw - model.target_mean) / model.target_std;
                    let diff = o - t_std;
                    batch_loss += diff * diff / n_t;
                    grad_out[j] = T::lit(2.0) * diff / n_t;
                }
                model.stack.backward(&cache, &grad_out, &mut grads);
            }
            let batch_len = T::from_usize(chunk.len()).unwrap();
            grads.scale(T::one() / batch_len);
            clip_global_norm(&mut grads.tensors_mut(), cfg.clip_norm);
            adam.step(&mut model.stack_tensors_mut(), &grads.tensors(), lr);
            epoch_loss += batch_loss;
        }
        let mean_loss = epoch_loss / T::from_usize(n).unwrap();
        if !mean_loss.is_finite() {
            return Err(Error::Divergence(format!(
                "{} forecaster, epoch {epoch}: loss {mean_loss}",
                target.name()
            )));
        }
        history.push(mean_loss);
    }
    Ok((model, history))
}

impl<T: Scalar> ForecastModel<T> {
    fn stack_tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for l in self.stack.layers.iter_mut() {
            out.push(&mut l.wx);
            out.push(&mut l.wh);
            out.push(&mut l.b);
        }
        out.push(&mut self.stack.head_w);
        out.push(&mut self.stack.head_b);
        out
    }
}

/// The 1-hour-lag baseline: predict `s[t]` as `s[t - 1]`.
pub fn lag_baseline<T: Scalar>(values: &[T], t: usize) -> Result<T> {
    if t == 0 || t > values.len() {
        return Err(Error::InvalidArgument(format!(
            "lag baseline undefined at t = {t}"
        )));
    }
    Ok(values[t - 1])
}

/// Root-mean-squared error and coefficient of determination. `r2` is `None`
/// when the targets have zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ForecastScore<T: Scalar> {
    pub rmse: T,
    pub r2: Option<T>,
}

pub fn evaluate_forecasts<T: Scalar>(predictions: &[T], targets: &[T]) -> Result<ForecastScore<T>> {
    if predictions.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if targets.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 points to score".into(),
        ));
    }
    let n = T::from_usize(targets.len()).unwrap();
    let mean = targets.iter().copied().sum::<T>() / n;
    let ss_res = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (t - p) * (t - p))
        .sum::<T>();
    let ss_tot = targets.iter().map(|&t| (t - mean) * (t - mean)).sum::<T>();
    let rmse = (ss_res / n).sqrt();
    let r2 = if ss_tot > T::zero() {
        Some(T::one() - ss_res / ss_tot)
    } else {
        None
    };
    Ok(ForecastScore { rmse, r2 })
}

/// Next-step forecasts of (price, solar, load) per hour for one building,
/// for appending to the agent's observations.
pub fn next_step_forecasts<T: Scalar>(
    price_model: &ForecastModel<T>,
    solar_model: &ForecastModel<T>,
    nsl_model: &ForecastModel<T>,
    prices: &[T],
    solar: &LoadSeries<T>,
    load: &LoadSeries<T>,
) -> Vec<[T; 3]> {
    let start = load.start();
    let p = price_model.rolling_forecast(prices, start);
    let s = solar_model.rolling_forecast(&solar.values, start);
    let l = nsl_model.rolling_forecast(&load.values, start);
    (0..load.len()).map(|t| [p[t], s[t], l[t]]).collect()
}
