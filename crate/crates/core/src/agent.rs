//! Discrete masked-policy machinery: the action discretization table, the
//! per-step validity mask, masked categorical distributions, observation
//! normalization, and the serialized per-cluster policy bundle.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::env::ActionBounds;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::scalar::Scalar;

/// Finite stand-in for minus infinity on masked logits.
pub const MASK_LOGIT: f64 = -1e8;

/// `2l + 1` action fractions evenly spaced over [-1, 1]: `l` discharge
/// entries, idle, `l` charge entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ActionTable<T: Scalar> {
    pub entries: Vec<T>,
    pub l: usize,
}

impl<T: Scalar> ActionTable<T> {
    pub fn new(l: usize) -> Self {
        assert!(l >= 1, "need at least one step per direction");
        assert!(2 * l < 64, "mask is stored in a u64");
        let denom = T::from_usize(l).unwrap();
        let entries = (0..=2 * l)
            .map(|i| (T::from_usize(i).unwrap() - denom) / denom)
            .collect();
        ActionTable { entries, l }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn idle_index(&self) -> usize {
        self.l
    }

    pub fn fraction(&self, index: usize) -> T {
        self.entries[index]
    }

    /// Index of the entry nearest to `fraction`; ties go to the lower index.
    pub fn nearest(&self, fraction: T) -> usize {
        let mut best = 0;
        let mut best_d = (self.entries[0] - fraction).abs();
        for (i, &e) in self.entries.iter().enumerate().skip(1) {
            let d = (e - fraction).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

/// Bitset over table entries; bit `i` set means entry `i` is inside the
/// current safe bounds. Idle is always valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMask {
    bits: u64,
    len: usize,
}

impl ActionMask {
    pub fn from_bounds<T: Scalar>(bounds: &ActionBounds<T>, table: &ActionTable<T>) -> Self {
        let mut bits = 0u64;
        for (i, &e) in table.entries.iter().enumerate() {
            if e >= bounds.low && e <= bounds.high {
                bits |= 1 << i;
            }
        }
        debug_assert!(bits & (1 << table.idle_index()) != 0, "idle must be valid");
        ActionMask {
            bits,
            len: table.len(),
        }
    }

    pub fn all_valid(len: usize) -> Self {
        ActionMask {
            bits: if len == 64 { u64::MAX } else { (1 << len) - 1 },
            len,
        }
    }

    pub fn from_bits(bits: u64, len: usize) -> Self {
        ActionMask { bits, len }
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.bits & (1 << i) != 0
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.is_set(i))
    }
}

/// Compute the per-step mask directly from bounds and table.
pub fn mask_from_bounds<T: Scalar>(bounds: &ActionBounds<T>, table: &ActionTable<T>) -> ActionMask {
    ActionMask::from_bounds(bounds, table)
}

/// Logits with masked entries forced to [`MASK_LOGIT`].
pub fn apply_mask<T: Scalar>(logits: &[T], mask: &ActionMask) -> Vec<T> {
    debug_assert_eq!(logits.len(), mask.len());
    logits
        .iter()
        .enumerate()
        .map(|(i, &z)| if mask.is_set(i) { z } else { T::lit(MASK_LOGIT) })
        .collect()
}

/// Probability vector of the masked softmax. Masked entries underflow to
/// zero; valid entries sum to one.
pub fn masked_distribution<T: Scalar>(logits: &[T], mask: &ActionMask) -> Vec<T> {
    assert!(!mask.is_empty(), "all actions masked");
    let masked = apply_mask(logits, mask);
    let max = masked
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let mut probs: Vec<T> = masked.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = probs.iter().copied().sum();
    for p in probs.iter_mut() {
        *p /= sum;
    }
    probs
}

/// Log-probabilities of the masked softmax (stable log-sum-exp).
pub fn masked_log_softmax<T: Scalar>(logits: &[T], mask: &ActionMask) -> Vec<T> {
    assert!(!mask.is_empty(), "all actions masked");
    let masked = apply_mask(logits, mask);
    let max = masked
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let log_sum = masked
        .iter()
        .map(|&z| (z - max).exp())
        .sum::<T>()
        .ln()
        + max;
    masked.iter().map(|&z| z - log_sum).collect()
}

/// Sample an index from a probability vector by inverse CDF.
pub fn sample_index<T: Scalar>(probs: &[T], rng: &mut impl Rng) -> usize {
    let u = T::lit(rng.gen::<f64>());
    let mut acc = T::zero();
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > T::zero() {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Nearest table entry to `fraction` among the mask-valid ones; falls back
/// to idle, which is always valid.
pub fn nearest_valid<T: Scalar>(table: &ActionTable<T>, mask: &ActionMask, fraction: T) -> usize {
    let mut best = table.idle_index();
    let mut best_d = (table.fraction(best) - fraction).abs();
    for i in mask.valid_indices() {
        let d = (table.fraction(i) - fraction).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Argmax over the masked distribution; ties go to the lowest index.
pub fn masked_argmax<T: Scalar>(logits: &[T], mask: &ActionMask) -> usize {
    let mut best: Option<usize> = None;
    for i in mask.valid_indices() {
        best = match best {
            None => Some(i),
            Some(b) if logits[i] > logits[b] => Some(i),
            keep => keep,
        };
    }
    best.expect("at least one valid action")
}

/// Per-feature standardization statistics gathered from random-policy
/// observations. Constant features get a floored deviation and normalize
/// to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ObsNormalizer<T: Scalar> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub samples: usize,
}

pub const STD_FLOOR: f64 = 1e-6;

/// Welford accumulator for [`ObsNormalizer`].
#[derive(Debug, Clone)]
pub struct RunningStats<T: Scalar> {
    mean: Vec<T>,
    m2: Vec<T>,
    count: usize,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); dim],
            m2: vec![T::zero(); dim],
            count: 0,
        }
    }

    pub fn push(&mut self, obs: &[T]) {
        debug_assert_eq!(obs.len(), self.mean.len());
        self.count += 1;
        let n = T::from_usize(self.count).unwrap();
        for (d, &x) in obs.iter().enumerate() {
            let delta = x - self.mean[d];
            self.mean[d] += delta / n;
            self.m2[d] += delta * (x - self.mean[d]);
        }
    }

    pub fn finalize(self) -> ObsNormalizer<T> {
        let n = T::from_usize(self.count.max(1)).unwrap();
        let floor = T::lit(STD_FLOOR);
        let std = self
            .m2
            .iter()
            .map(|&m2| {
                let s = (m2 / n).max(T::zero()).sqrt();
                if s < floor {
                    floor
                } else {
                    s
                }
            })
            .collect();
        ObsNormalizer {
            mean: self.mean,
            std,
            samples: self.count,
        }
    }
}

impl<T: Scalar> ObsNormalizer<T> {
    pub fn identity(dim: usize) -> Self {
        ObsNormalizer {
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
            samples: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, obs: &[T]) -> Vec<T> {
        debug_assert_eq!(obs.len(), self.mean.len());
        obs.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }
}

pub const POLICY_BUNDLE_VERSION: u32 = 1;

/// Everything needed to run one cluster's trained policy: the policy and
/// value networks, the observation normalizer, the action table, and the
/// training hyperparameters that shaped them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PolicyBundle<T: Scalar> {
    pub schema_version: u32,
    pub cluster_id: usize,
    pub policy: Mlp<T>,
    pub value: Mlp<T>,
    pub gamma: T,
    pub clip_eps: T,
    pub normalizer: ObsNormalizer<T>,
    pub table: ActionTable<T>,
    pub forecast_enabled: bool,
    /// Digest of the training configuration, for provenance checks.
    pub config_digest: String,
}

impl<T: Scalar> PolicyBundle<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= T::zero() && self.gamma <= T::one()) {
            return Err(Error::InvalidArgument("gamma must be in [0, 1]".into()));
        }
        if !(self.clip_eps > T::zero()) {
            return Err(Error::InvalidArgument("clip radius must be > 0".into()));
        }
        if self.policy.out_dim() != self.table.len() {
            return Err(Error::InvalidArgument(format!(
                "policy emits {} logits for {} actions",
                self.policy.out_dim(),
                self.table.len()
            )));
        }
        Ok(())
    }

    /// Greedy action for evaluation: argmax of the masked distribution.
    pub fn act_greedy(&self, raw_obs: &[T], mask: &ActionMask) -> usize {
        let obs = self.normalizer.normalize(raw_obs);
        let logits = self.policy.forward(&obs);
        masked_argmax(&logits, mask)
    }

    /// Sampled action with its log-probability and the value estimate.
    pub fn act_sample(
        &self,
        raw_obs: &[T],
        mask: &ActionMask,
        rng: &mut impl Rng,
    ) -> (usize, T, T, Vec<T>) {
        let obs = self.normalizer.normalize(raw_obs);
        let logits = self.policy.forward(&obs);
        let probs = masked_distribution(&logits, mask);
        let action = sample_index(&probs, rng);
        let logp = masked_log_softmax(&logits, mask)[action];
        let value = self.value.forward(&obs)[0];
        (action, logp, value, obs)
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
        let bundle: PolicyBundle<T> =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        bundle.validate()?;
        Ok(bundle)
    }
}
