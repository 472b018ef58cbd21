//! Masked proximal policy optimization over the discretized action space:
//! trajectory storage, generalized advantage estimation, clipped-surrogate
//! updates with hand-derived gradients, and per-cluster training.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    mask_from_bounds, masked_distribution, masked_log_softmax, nearest_valid, sample_index,
    ActionMask, ActionTable, ObsNormalizer, PolicyBundle, RunningStats, POLICY_BUNDLE_VERSION,
};
use crate::data::{BuildingSpec, TariffSchedule};
use crate::env::{BuildingEnv, EnvConfig};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Adam, AdamConfig, Mlp, MlpGrads};
use crate::scalar::Scalar;

/// On-policy rollout storage. Only mask-valid actions can be recorded.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch<T: Scalar> {
    pub obs: Vec<Vec<T>>,
    pub actions: Vec<usize>,
    pub masks: Vec<ActionMask>,
    pub rewards: Vec<T>,
    pub values: Vec<T>,
    pub logps: Vec<T>,
    pub dones: Vec<bool>,
    /// Value estimate of the state after the final step (0 if terminal).
    pub last_value: T,
}

impl<T: Scalar> TrajectoryBatch<T> {
    pub fn new() -> Self {
        TrajectoryBatch {
            obs: Vec::new(),
            actions: Vec::new(),
            masks: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            logps: Vec::new(),
            dones: Vec::new(),
            last_value: T::zero(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        obs: Vec<T>,
        action: usize,
        mask: ActionMask,
        reward: T,
        value: T,
        logp: T,
        done: bool,
    ) {
        assert!(mask.is_set(action), "recorded action must be mask-valid");
        self.obs.push(obs);
        self.actions.push(action);
        self.masks.push(mask);
        self.rewards.push(reward);
        self.values.push(value);
        self.logps.push(logp);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl<T: Scalar> Default for TrajectoryBatch<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Raw generalized advantage estimates (no normalization).
pub fn gae<T: Scalar>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    last_value: T,
    gamma: T,
    lambda: T,
) -> Vec<T> {
    let n = rewards.len();
    let mut adv = vec![T::zero(); n];
    let mut running = T::zero();
    for t in (0..n).rev() {
        let cont = if dones[t] { T::zero() } else { T::one() };
        let next_value = if t + 1 < n {
            if dones[t] { T::zero() } else { values[t + 1] }
        } else {
            cont * last_value
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * cont * running;
        adv[t] = running;
    }
    adv
}

/// GAE advantages (normalized to zero mean and unit deviation when the batch
/// has more than one step) and the value-function return targets.
pub fn advantages<T: Scalar>(
    batch: &TrajectoryBatch<T>,
    gamma: T,
    lambda: T,
) -> Result<(Vec<T>, Vec<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let raw = gae(
        &batch.rewards,
        &batch.values,
        &batch.dones,
        batch.last_value,
        gamma,
        lambda,
    );
    let returns: Vec<T> = raw.iter().zip(&batch.values).map(|(&a, &v)| a + v).collect();
    let n = T::from_usize(raw.len()).unwrap();
    let mean = raw.iter().copied().sum::<T>() / n;
    let var = raw.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
    let std = var.sqrt().max(T::lit(1e-8));
    let normalized = if raw.len() > 1 {
        raw.iter().map(|&a| (a - mean) / std).collect()
    } else {
        raw
    };
    Ok((normalized, returns))
}

/// Probability ratio between new and old policies.
pub fn ppo_ratio<T: Scalar>(logp_new: T, logp_old: T) -> T {
    (logp_new - logp_old).exp()
}

/// Clipped surrogate objective for one step.
pub fn clipped_surrogate<T: Scalar>(ratio: T, advantage: T, clip_eps: T) -> T {
    let clipped = ratio.max(T::one() - clip_eps).min(T::one() + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PpoConfig<T: Scalar> {
    pub gamma: T,
    pub lambda: T,
    pub clip_eps: T,
    pub lr: T,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub value_coef: T,
    pub entropy_coef: T,
    pub max_grad_norm: T,
    /// Hidden layer sizes of both networks.
    pub hidden: [usize; 2],
}

impl<T: Scalar> Default for PpoConfig<T> {
    fn default() -> Self {
        PpoConfig {
            gamma: T::lit(0.99),
            lambda: T::lit(0.95),
            clip_eps: T::lit(0.2),
            lr: T::lit(5e-4),
            update_epochs: 4,
            minibatch_size: 256,
            value_coef: T::lit(0.5),
            entropy_coef: T::lit(0.03),
            max_grad_norm: T::lit(0.5),
            hidden: [64, 64],
        }
    }
}

/// Post-update health numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PpoDiagnostics<T: Scalar> {
    pub policy_loss: T,
    pub value_loss: T,
    pub entropy: T,
    pub approx_kl: T,
    pub clip_fraction: T,
}

/// Policy and value networks plus their optimizer state.
pub struct PpoTrainer<T: Scalar> {
    pub policy: Mlp<T>,
    pub value: Mlp<T>,
    pub cfg: PpoConfig<T>,
    policy_opt: Adam<T>,
    value_opt: Adam<T>,
    rng: ChaCha20Rng,
}

impl<T: Scalar> PpoTrainer<T> {
    pub fn new(obs_dim: usize, n_actions: usize, cfg: PpoConfig<T>, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let policy = Mlp::new(&[obs_dim, cfg.hidden[0], cfg.hidden[1], n_actions], &mut rng);
        let value = Mlp::new(&[obs_dim, cfg.hidden[0], cfg.hidden[1], 1], &mut rng);
        let policy_shapes: Vec<usize> = policy
            .layers
            .iter()
            .flat_map(|l| [l.w.len(), l.b.len()])
            .collect();
        let value_shapes: Vec<usize> = value
            .layers
            .iter()
            .flat_map(|l| [l.w.len(), l.b.len()])
            .collect();
        PpoTrainer {
            policy,
            value,
            policy_opt: Adam::for_shapes(&policy_shapes, AdamConfig::default()),
            value_opt: Adam::for_shapes(&value_shapes, AdamConfig::default()),
            cfg,
            rng,
        }
    }

    /// One PPO update over a collected batch: `update_epochs` passes of
    /// minibatch gradient ascent on the clipped surrogate, minus the value
    /// loss, plus the entropy bonus. Masks are re-applied at every logit
    /// evaluation.
    pub fn update(&mut self, batch: &TrajectoryBatch<T>) -> Result<PpoDiagnostics<T>> {
        self.update_with_lr(batch, self.cfg.lr)
    }

    /// [`PpoTrainer::update`] at an explicit step size, for schedules.
    pub fn update_with_lr(&mut self, batch: &TrajectoryBatch<T>, lr: T) -> Result<PpoDiagnostics<T>> {
        let entropy_coef = self.cfg.entropy_coef;
        let (adv, returns) = advantages(batch, self.cfg.gamma, self.cfg.lambda)?;
        let n = batch.len();
        let mut indices: Vec<usize> = (0..n).collect();

        let mut diag_policy = T::zero();
        let mut diag_value = T::zero();
        let mut diag_entropy = T::zero();
        let mut diag_kl = T::zero();
        let mut diag_clipped = T::zero();
        let mut diag_count = T::zero();

        for _ in 0..self.cfg.update_epochs {
            indices.shuffle(&mut self.rng);
            for chunk in indices.chunks(self.cfg.minibatch_size) {
                let mut pgrads = MlpGrads::zeros_like(&self.policy);
                let mut vgrads = MlpGrads::zeros_like(&self.value);
                let batch_len = T::from_usize(chunk.len()).unwrap();
                let inv = T::one() / batch_len;

                for &i in chunk {
                    let obs = &batch.obs[i];
                    let mask = &batch.masks[i];
                    let action = batch.actions[i];
                    let a_i = adv[i];

                    let (logits, pcache) = self.policy.forward_cached(obs);
                    let logps = masked_log_softmax(&logits, mask);
                    let probs = masked_distribution(&logits, mask);
                    let logp_new = logps[action];
                    let ratio = ppo_ratio(logp_new, batch.logps[i]);
                    let surr1 = ratio * a_i;
                    let clipped_ratio = ratio
                        .max(T::one() - self.cfg.clip_eps)
                        .min(T::one() + self.cfg.clip_eps);
                    let surr2 = clipped_ratio * a_i;
                    let surrogate = surr1.min(surr2);

                    let mut entropy = T::zero();
                    for (&p, &lp) in probs.iter().zip(&logps) {
                        if p > T::zero() {
                            entropy -= p * lp;
                        }
                    }

                    // d(-surrogate)/dlogp = -ratio * A when the unclipped
                    // branch is active, 0 otherwise
                    let dlogp = if surr1 <= surr2 { -ratio * a_i } else { T::zero() };
                    let mut grad_logits = vec![T::zero(); logits.len()];
                    for (k, g) in grad_logits.iter_mut().enumerate() {
                        let indicator = if k == action { T::one() } else { T::zero() };
                        // policy term: dlogp * dlogp_a/dz_k
                        *g = dlogp * (indicator - probs[k]) * inv;
                        // entropy bonus: -coef * dH/dz_k
                        if probs[k] > T::zero() {
                            *g += entropy_coef * probs[k] * (logps[k] + entropy) * inv;
                        }
                    }
                    self.policy.backward(&pcache, &grad_logits, &mut pgrads);

                    let (v_out, vcache) = self.value.forward_cached(obs);
                    let v_err = v_out[0] - returns[i];
                    let grad_v =
                        vec![T::lit(2.0) * self.cfg.value_coef * v_err * inv];
                    self.value.backward(&vcache, &grad_v, &mut vgrads);

                    diag_policy -= surrogate;
                    diag_value += self.cfg.value_coef * v_err * v_err;
                    diag_entropy += entropy;
                    diag_kl += batch.logps[i] - logp_new;
                    if (ratio - T::one()).abs() > self.cfg.clip_eps {
                        diag_clipped += T::one();
                    }
                    diag_count += T::one();
                }

                clip_global_norm(
                    &mut pgrads
                        .w
                        .iter_mut()
                        .chain(pgrads.b.iter_mut())
                        .collect::<Vec<_>>(),
                    self.cfg.max_grad_norm,
                );
                clip_global_norm(
                    &mut vgrads
                        .w
                        .iter_mut()
                        .chain(vgrads.b.iter_mut())
                        .collect::<Vec<_>>(),
                    self.cfg.max_grad_norm,
                );
                self.policy_opt.step(
                    &mut self.policy.tensors_mut(),
                    &pgrads.tensors_in_mlp_order(),
                    lr,
                );
                self.value_opt.step(
                    &mut self.value.tensors_mut(),
                    &vgrads.tensors_in_mlp_order(),
                    lr,
                );
            }
        }

        let diag = PpoDiagnostics {
            policy_loss: diag_policy / diag_count,
            value_loss: diag_value / diag_count,
            entropy: diag_entropy / diag_count,
            approx_kl: diag_kl / diag_count,
            clip_fraction: diag_clipped / diag_count,
        };
        if !(diag.policy_loss.is_finite() && diag.value_loss.is_finite()) {
            return Err(Error::Divergence(format!(
                "ppo update produced non-finite losses: {diag:?}"
            )));
        }
        Ok(diag)
    }
}

/// How training interacts with the environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ClusterTrainConfig<T: Scalar> {
    pub episodes: usize,
    /// Episode horizon in hours.
    pub episode_hours: usize,
    pub env: EnvConfig<T>,
    /// Observations collected by the random policy for normalization.
    pub normalization_steps: usize,
    pub l: usize,
}

impl<T: Scalar> Default for ClusterTrainConfig<T> {
    fn default() -> Self {
        ClusterTrainConfig {
            episodes: 400,
            episode_hours: 2190,
            env: EnvConfig::default(),
            normalization_steps: 8760 * 5,
            l: 10,
        }
    }
}

/// One learning-curve point per episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CurvePoint<T: Scalar> {
    pub episode: usize,
    pub total_reward: T,
    pub normalized_price_cost: T,
}

fn make_env<T: Scalar>(
    building: &BuildingSpec<T>,
    tariff: &TariffSchedule<T>,
    forecasts: Option<&Vec<[T; 3]>>,
    env_cfg: EnvConfig<T>,
) -> Result<BuildingEnv<T>> {
    let env = BuildingEnv::new(building.clone(), tariff.clone(), env_cfg)?;
    match forecasts {
        Some(f) => env.with_forecasts(f.clone()),
        None => Ok(env),
    }
}

/// Gather observation statistics by driving random valid actions: a fraction
/// is drawn uniformly over the current bounds and snapped to the nearest
/// table entry.
pub fn collect_normalization_stats<T: Scalar>(
    buildings: &[BuildingSpec<T>],
    tariff: &TariffSchedule<T>,
    forecasts: Option<&[Vec<[T; 3]>]>,
    cfg: &ClusterTrainConfig<T>,
    seed: u64,
) -> Result<ObsNormalizer<T>> {
    if buildings.is_empty() {
        return Err(Error::InvalidArgument("no buildings".into()));
    }
    let table = ActionTable::<T>::new(cfg.l);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut env_cfg = cfg.env;
    env_cfg.episode_hours = cfg.episode_hours;

    let mut stats: Option<RunningStats<T>> = None;
    let mut collected = 0usize;
    let mut building_idx = 0usize;
    while collected < cfg.normalization_steps {
        let b = building_idx % buildings.len();
        building_idx += 1;
        let mut env = make_env(
            &buildings[b],
            tariff,
            forecasts.map(|f| &f[b]),
            env_cfg,
        )?;
        let t0 = random_episode_start(&mut rng, buildings[b].horizon(), cfg.episode_hours);
        let mut state = env.reset(t0)?;
        while !env.is_terminal() && collected < cfg.normalization_steps {
            let obs = state.to_observation();
            let st = stats.get_or_insert_with(|| RunningStats::new(obs.len()));
            st.push(&obs);
            collected += 1;

            let bounds = env.bounds();
            let u: T = T::lit(rng.gen::<f64>());
            let fraction = bounds.low + (bounds.high - bounds.low) * u;
            let snapped = nearest_valid(&table, &mask_from_bounds(&bounds, &table), fraction);
            state = env.step_fraction(table.fraction(snapped))?.next_state;
        }
    }
    Ok(stats.expect("collected at least one step").finalize())
}

fn random_episode_start(rng: &mut ChaCha20Rng, horizon: usize, episode_hours: usize) -> usize {
    if horizon <= episode_hours {
        return 0;
    }
    let max_day = (horizon - episode_hours) / 24;
    24 * rng.gen_range(0..=max_day)
}

/// Train one cluster's policy with building resampling: every episode draws
/// a building uniformly from the cluster and a day-aligned start hour, rolls
/// out the masked stochastic policy, and applies one PPO update.
pub fn train_cluster_policy<T: Scalar>(
    cluster_id: usize,
    buildings: &[BuildingSpec<T>],
    tariff: &TariffSchedule<T>,
    forecasts: Option<&[Vec<[T; 3]>]>,
    ppo_cfg: PpoConfig<T>,
    train_cfg: &ClusterTrainConfig<T>,
    seed: u64,
) -> Result<(PolicyBundle<T>, Vec<CurvePoint<T>>)> {
    if buildings.is_empty() {
        return Err(Error::InvalidArgument("empty cluster".into()));
    }
    let table = ActionTable::<T>::new(train_cfg.l);
    let normalizer =
        collect_normalization_stats(buildings, tariff, forecasts, train_cfg, seed ^ 0x5eed)?;
    let obs_dim = normalizer.dim();

    let mut trainer = PpoTrainer::new(obs_dim, table.len(), ppo_cfg, seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
    let mut env_cfg = train_cfg.env;
    env_cfg.episode_hours = train_cfg.episode_hours;

    let mut bundle = PolicyBundle {
        schema_version: POLICY_BUNDLE_VERSION,
        cluster_id,
        policy: trainer.policy.clone(),
        value: trainer.value.clone(),
        gamma: ppo_cfg.gamma,
        clip_eps: ppo_cfg.clip_eps,
        normalizer,
        table: table.clone(),
        forecast_enabled: forecasts.is_some(),
        config_digest: format!(
            "ppo(lr={},clip={},gamma={},lambda={},epochs={},minibatch={},entropy={})",
            ppo_cfg.lr,
            ppo_cfg.clip_eps,
            ppo_cfg.gamma,
            ppo_cfg.lambda,
            ppo_cfg.update_epochs,
            ppo_cfg.minibatch_size,
            ppo_cfg.entropy_coef,
        ),
    };

    let mut curve = Vec::with_capacity(train_cfg.episodes);
    for episode in 0..train_cfg.episodes {
        let b = rng.gen_range(0..buildings.len());
        let mut env = make_env(
            &buildings[b],
            tariff,
            forecasts.map(|f| &f[b]),
            env_cfg,
        )?;
        let t0 = random_episode_start(&mut rng, buildings[b].horizon(), train_cfg.episode_hours);
        let mut state = env.reset(t0)?;

        let mut batch = TrajectoryBatch::new();
        let mut total_reward = T::zero();
        while !env.is_terminal() {
            let raw_obs = state.to_observation();
            let mask = mask_from_bounds(&env.bounds(), &table);
            let (action, logp, value, norm_obs) =
                bundle_act(&trainer, &bundle.normalizer, &raw_obs, &mask, &mut rng);
            let outcome = env.step_fraction(table.fraction(action))?;
            let done = env.is_terminal();
            total_reward += outcome.reward;
            batch.push(norm_obs, action, mask, outcome.reward, value, logp, done);
            state = outcome.next_state;
        }
        batch.last_value = T::zero();
        // linear step-size anneal stabilizes the late phase of training
        let progress = T::from_usize(episode).unwrap()
            / T::from_usize(train_cfg.episodes.max(1)).unwrap();
        let lr = ppo_cfg.lr * (T::one() - T::lit(0.8) * progress);
        trainer.update_with_lr(&batch, lr)?;

        let costs = env.costs();
        let normalized_price = if costs.baseline_price > T::zero() {
            costs.agent_price / costs.baseline_price
        } else {
            T::one()
        };
        curve.push(CurvePoint {
            episode,
            total_reward,
            normalized_price_cost: normalized_price,
        });
    }

    bundle.policy = trainer.policy;
    bundle.value = trainer.value;
    Ok((bundle, curve))
}

fn bundle_act<T: Scalar>(
    trainer: &PpoTrainer<T>,
    normalizer: &ObsNormalizer<T>,
    raw_obs: &[T],
    mask: &ActionMask,
    rng: &mut ChaCha20Rng,
) -> (usize, T, T, Vec<T>) {
    let obs = normalizer.normalize(raw_obs);
    let logits = trainer.policy.forward(&obs);
    let probs = masked_distribution(&logits, mask);
    let action = sample_index(&probs, rng);
    let logp = masked_log_softmax(&logits, mask)[action];
    let value = trainer.value.forward(&obs)[0];
    (action, logp, value, obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::apply_mask;

    fn toy_mask(len: usize) -> ActionMask {
        ActionMask::all_valid(len)
    }

    #[test]
    fn gae_zero_rewards_zero_values() {
        let adv = gae(&[0.0f64; 5], &[0.0; 5], &[false; 5], 0.0, 0.99, 0.95);
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn gae_monte_carlo_limit() {
        // gamma = 1, lambda = 1: advantage is the reward-to-go minus V
        let rewards = vec![1.0, -2.0, 0.5, 3.0];
        let values = vec![0.3, 0.1, -0.5, 0.2];
        let mut dones = vec![false; 4];
        dones[3] = true;
        let adv = gae(&rewards, &values, &dones, 0.0, 1.0, 1.0);
        for t in 0..4 {
            let to_go: f64 = rewards[t..].iter().sum();
            assert!((adv[t] - (to_go - values[t])).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn gae_single_step() {
        let adv = gae(&[2.0f64], &[0.5], &[true], 0.0, 0.9, 0.95);
        assert!((adv[0] - (2.0 - 0.5)).abs() < 1e-12);
        let adv = gae(&[2.0f64], &[0.5], &[false], 1.0, 0.9, 0.95);
        assert!((adv[0] - (2.0 + 0.9 * 1.0 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn advantage_normalization_statistics() {
        let mut batch = TrajectoryBatch::new();
        let mask = toy_mask(3);
        for i in 0..64 {
            batch.push(
                vec![i as f64 / 64.0],
                i % 3,
                mask,
                (i as f64 * 0.37).sin(),
                0.1 * i as f64,
                -1.0,
                i == 63,
            );
        }
        let (adv, _) = advantages(&batch, 0.99, 0.95).unwrap();
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ratio_and_surrogate_examples() {
        assert_eq!(ppo_ratio(-1.5f64, -1.5), 1.0);
        assert!((ppo_ratio(-0.5 + 2.0f64.ln(), -0.5) - 2.0).abs() < 1e-12);

        assert_eq!(clipped_surrogate(1.0f64, 3.0, 0.2), 3.0);
        assert!((clipped_surrogate(2.0f64, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clipped_surrogate(0.5f64, -1.0, 0.2) - (-0.8)).abs() < 1e-12);
    }

    #[test]
    fn surrogate_is_pessimistic() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..500 {
            let r = rng.gen_range(0.0..3.0);
            let a = rng.gen_range(-2.0..2.0);
            assert!(clipped_surrogate(r, a, 0.2) <= r * a + 1e-12);
        }
    }

    /// Analytic policy gradient of the surrogate on a 3-action toy matches
    /// central finite differences.
    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let mask = toy_mask(3);
        let surrogate_of = |logits: &[f64], action: usize, logp_old: f64, adv: f64| {
            let logps = masked_log_softmax(logits, &mask);
            clipped_surrogate(ppo_ratio(logps[action], logp_old), adv, 0.2)
        };
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let action = rng.gen_range(0..3);
            let adv: f64 = rng.gen_range(-2.0..2.0);
            let logp_old = masked_log_softmax(&logits, &mask)[action] + rng.gen_range(-0.1..0.1);

            let logps = masked_log_softmax(&logits, &mask);
            let probs = masked_distribution(&logits, &mask);
            let ratio = ppo_ratio(logps[action], logp_old);
            let surr1 = ratio * adv;
            let surr2 = ratio.clamp(0.8, 1.2) * adv;
            let dlogp = if surr1 <= surr2 { ratio * adv } else { 0.0 };
            let analytic: Vec<f64> = (0..3)
                .map(|k| dlogp * ((k == action) as usize as f64 - probs[k]))
                .collect();

            let h = 1e-6;
            for k in 0..3 {
                let mut up = logits.clone();
                up[k] += h;
                let mut down = logits.clone();
                down[k] -= h;
                let numeric =
                    (surrogate_of(&up, action, logp_old, adv) - surrogate_of(&down, action, logp_old, adv))
                        / (2.0 * h);
                let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
                assert!(
                    ((analytic[k] - numeric) / denom).abs() < 1e-4,
                    "k={k}: {} vs {numeric}",
                    analytic[k]
                );
            }
        }
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged() {
        let mut trainer = PpoTrainer::new(
            4,
            5,
            PpoConfig {
                entropy_coef: 0.0,
                ..Default::default()
            },
            3,
        );
        let before = trainer.policy.clone();
        let mut batch = TrajectoryBatch::new();
        let mask = toy_mask(5);
        // zero rewards and zero values: every advantage is exactly zero
        for i in 0..32 {
            let obs: Vec<f64> = (0..4).map(|d| ((i + d) as f64 * 0.13).sin()).collect();
            let logits = trainer.policy.forward(&obs);
            let logp = masked_log_softmax(&logits, &mask)[i % 5];
            batch.push(obs, i % 5, mask, 0.0, 0.0, logp, i == 31);
        }
        trainer.update(&batch).unwrap();
        assert_eq!(trainer.policy, before);
    }

    #[test]
    fn normalization_stats_center_the_collected_sample() {
        use crate::data::{generate_synthetic_corpus, CorpusParams, TariffSchedule};
        let corpus =
            generate_synthetic_corpus::<f64>(2, 30 * 24, 2, 3, &CorpusParams::default()).unwrap();
        let buildings: Vec<_> = corpus.into_iter().map(|(b, _)| b).collect();
        let tariff = TariffSchedule::time_of_use(30, 0.1, 0.6, 0.04, 0.08, 17, 21).unwrap();
        let cfg = ClusterTrainConfig::<f64> {
            episodes: 1,
            episode_hours: 240,
            normalization_steps: 3000,
            ..Default::default()
        };
        let norm = collect_normalization_stats(&buildings, &tariff, None, &cfg, 17).unwrap();
        assert_eq!(norm.samples, 3000);
        assert_eq!(norm.dim(), crate::env::EnvState::<f64>::observation_dim(1, false));
        assert!(norm.std.iter().all(|&s| s > 0.0));
        // a 30-day corpus never leaves January: both month features are
        // constant, floored, and normalize to zero
        let fixed = crate::forecast::temporal_features::<f64>(crate::data::Temporal {
            month: 1,
            day_type: 3,
            hour: 5,
        });
        assert_eq!(norm.std[5], crate::agent::STD_FLOOR);
        assert_eq!(norm.std[6], crate::agent::STD_FLOOR);
        let mut obs = vec![0.0; norm.dim()];
        obs[5] = fixed[0];
        obs[6] = fixed[1];
        let z = norm.normalize(&obs);
        assert_eq!(z[5], 0.0);
        assert_eq!(z[6], 0.0);

        let again = collect_normalization_stats(&buildings, &tariff, None, &cfg, 17).unwrap();
        assert_eq!(again, norm);
    }

    #[test]
    fn training_is_seed_reproducible() {
        use crate::data::{generate_synthetic_corpus, CorpusParams, TariffSchedule};
        let corpus =
            generate_synthetic_corpus::<f64>(2, 20 * 24, 1, 9, &CorpusParams::default()).unwrap();
        let buildings: Vec<_> = corpus.into_iter().map(|(b, _)| b).collect();
        let tariff = TariffSchedule::time_of_use(20, 0.1, 0.6, 0.04, 0.08, 17, 21).unwrap();
        let cfg = ClusterTrainConfig::<f64> {
            episodes: 2,
            episode_hours: 120,
            normalization_steps: 500,
            ..Default::default()
        };
        let (bundle_a, curve_a) =
            train_cluster_policy(0, &buildings, &tariff, None, PpoConfig::default(), &cfg, 5)
                .unwrap();
        let (bundle_b, curve_b) =
            train_cluster_policy(0, &buildings, &tariff, None, PpoConfig::default(), &cfg, 5)
                .unwrap();
        assert_eq!(curve_a, curve_b);
        assert_eq!(bundle_a, bundle_b);
    }

    #[test]
    fn masked_actions_stay_negligible_after_updates() {
        let mut trainer = PpoTrainer::new(3, 4, PpoConfig::default(), 7);
        let mask = ActionMask::from_bits(0b1011, 4); // action 2 invalid
        let mut batch = TrajectoryBatch::new();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for i in 0..64 {
            let obs: Vec<f64> = (0..3).map(|d| ((i * 3 + d) as f64 * 0.21).cos()).collect();
            let logits = trainer.policy.forward(&obs);
            let probs = masked_distribution(&logits, &mask);
            let action = sample_index(&probs, &mut rng);
            let logp = masked_log_softmax(&logits, &mask)[action];
            batch.push(obs, action, mask, rng.gen_range(-1.0..1.0), 0.0, logp, i == 63);
        }
        trainer.update(&batch).unwrap();
        for i in 0..64 {
            let obs: Vec<f64> = (0..3).map(|d| ((i * 3 + d) as f64 * 0.21).cos()).collect();
            let logits = trainer.policy.forward(&obs);
            let probs = masked_distribution(&logits, &mask);
            assert!(probs[2] < 1e-30);
            let masked = apply_mask(&logits, &mask);
            assert_eq!(masked[2], crate::agent::MASK_LOGIT);
        }
    }
}
