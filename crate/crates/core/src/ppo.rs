//! PPO with a clipped surrogate over a collected rollout batch.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PolicyError;
use crate::nn::{Adam, BatchCache};
use crate::policy::{gaussian_log_prob, gaussian_log_prob_grad, PolicyParams};
use crate::rewards::OBS_DIM;
use crate::sim::ACTION_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    /// Steps per environment between updates.
    pub horizon: usize,
    pub n_env: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Multiplier on rewards before advantage and value estimation.
    pub reward_scale: f64,
    pub total_steps: u64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            learning_rate: 3e-4,
            horizon: 24,
            n_env: 256,
            epochs: 5,
            minibatches: 4,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            reward_scale: 0.05,
            total_steps: 2_000_000,
            hidden: vec![64, 64],
            init_log_std: -0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err("gamma must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err("lambda must lie in [0, 1]".into());
        }
        if !(self.clip > 0.0) {
            return Err("clip must be > 0".into());
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be > 0".into());
        }
        if self.horizon == 0 || self.n_env == 0 || self.epochs == 0 || self.minibatches == 0 {
            return Err("horizon, n_env, epochs and minibatches must be >= 1".into());
        }
        Ok(())
    }
}

/// Flattened samples of one rollout, with advantages and returns attached.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub obs: Vec<[f64; OBS_DIM]>,
    /// Raw (unclamped) Gaussian samples.
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    fn check(&self) -> Result<(), PolicyError> {
        let n = self.obs.len();
        for (name, len) in [
            ("actions", self.actions.len()),
            ("log_probs", self.log_probs.len()),
            ("advantages", self.advantages.len()),
            ("returns", self.returns.len()),
        ] {
            if len != n {
                return Err(PolicyError::Length { what: format!("{name} has {len} entries, obs has {n}") });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

/// Clipped surrogate of one sample and its derivative with respect to the
/// sample's new log-probability.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        (unclipped, ratio * advantage)
    } else {
        (clipped, 0.0)
    }
}

/// Adam state for the three parameter groups.
#[derive(Debug, Clone)]
pub struct PpoOptimizer {
    policy: Adam,
    log_std: Adam,
    value: Adam,
}

impl PpoOptimizer {
    pub fn new(params: &PolicyParams, lr: f64) -> Self {
        Self {
            policy: Adam::new(params.policy.num_params(), lr),
            log_std: Adam::new(params.log_std.len(), lr),
            value: Adam::new(params.value.num_params(), lr),
        }
    }
}

/// Gradients of the PPO loss, grouped like [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct PpoGrad {
    pub policy: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: Vec<f64>,
}

impl PpoGrad {
    pub fn zeros(params: &PolicyParams) -> Self {
        Self {
            policy: vec![0.0; params.policy.num_params()],
            log_std: vec![0.0; params.log_std.len()],
            value: vec![0.0; params.value.num_params()],
        }
    }

    fn norm(&self) -> f64 {
        self.policy.iter().chain(&self.log_std).chain(&self.value).map(|g| g * g).sum::<f64>().sqrt()
    }

    fn scale(&mut self, k: f64) {
        for g in self.policy.iter_mut().chain(&mut self.log_std).chain(&mut self.value) {
            *g *= k;
        }
    }
}

/// Loss terms of one minibatch.
#[derive(Debug, Clone, Copy, Default)]
pub struct MinibatchLoss {
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clipped: usize,
}

impl MinibatchLoss {
    /// Scalar minimized by the update.
    pub fn total(&self, config: &PpoConfig) -> f64 {
        -self.surrogate + config.value_coef * self.value - config.entropy_coef * self.entropy
    }
}

/// Loss and gradient of `-surrogate + c_v * value_mse - c_e * entropy`
/// averaged over the samples `idx` of `batch`. `advantages` are the
/// (normalized) advantages used by the surrogate.
pub fn minibatch_gradient(
    params: &PolicyParams,
    batch: &RolloutBatch,
    advantages: &[f64],
    idx: &[usize],
    config: &PpoConfig,
) -> Result<(MinibatchLoss, PpoGrad), PolicyError> {
    let mut grad = PpoGrad::zeros(params);
    let mut loss = MinibatchLoss::default();
    let n = idx.len();
    if n == 0 {
        return Ok((loss, grad));
    }
    let inv_n = 1.0 / n as f64;
    let obs_dim = params.policy.input_dim();
    let mut obs = Vec::with_capacity(n * obs_dim);
    for &i in idx {
        if batch.obs[i].len() != obs_dim {
            return Err(PolicyError::Dimension { expected: obs_dim, got: batch.obs[i].len() });
        }
        obs.extend_from_slice(&batch.obs[i]);
    }
    let mut pcache = BatchCache::default();
    let mut vcache = BatchCache::default();
    let means = params.policy.forward_batch(&obs, n, &mut pcache)?.to_vec();
    let values = params.value.forward_batch(&obs, n, &mut vcache)?.to_vec();
    let mut d_mean = vec![0.0; n * ACTION_DIM];
    let mut dv = vec![0.0; n];

    for (row, &i) in idx.iter().enumerate() {
        let mean = &means[row * ACTION_DIM..(row + 1) * ACTION_DIM];
        let logp = gaussian_log_prob(&batch.actions[i], mean, &params.log_std);
        let log_ratio = logp - batch.log_probs[i];
        let ratio = log_ratio.exp();
        let (surr, d_logp) = clipped_surrogate(ratio, advantages[i], config.clip);
        loss.surrogate += surr * inv_n;
        loss.kl += ((ratio - 1.0) - log_ratio) * inv_n;
        if (ratio - 1.0).abs() > config.clip {
            loss.clipped += 1;
        }
        if d_logp != 0.0 {
            let (gm, gs) = gaussian_log_prob_grad(&batch.actions[i], mean, &params.log_std);
            let coef = -d_logp * inv_n;
            for k in 0..ACTION_DIM {
                d_mean[row * ACTION_DIM + k] = coef * gm[k];
                grad.log_std[k] += coef * gs[k];
            }
        }
        let err = values[row] - batch.returns[i];
        loss.value += err * err * inv_n;
        dv[row] = config.value_coef * 2.0 * err * inv_n;
    }
    params.policy.backward_batch(&pcache, &d_mean, &mut grad.policy)?;
    params.value.backward_batch(&vcache, &dv, &mut grad.value)?;

    loss.entropy = crate::policy::gaussian_entropy(&params.log_std);
    for g in &mut grad.log_std {
        *g -= config.entropy_coef;
    }
    Ok((loss, grad))
}

/// Normalizes advantages to zero mean and unit variance over the whole batch.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Runs `epochs x minibatches` Adam steps on the clipped PPO objective.
///
/// On a non-finite loss or gradient the parameters are restored to their
/// values on entry and [`PolicyError::NonFiniteLoss`] is returned.
pub fn ppo_update(
    params: &mut PolicyParams,
    opt: &mut PpoOptimizer,
    batch: &RolloutBatch,
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, PolicyError> {
    batch.check()?;
    if batch.is_empty() {
        return Ok(UpdateStats::default());
    }
    let backup = (params.clone(), opt.clone());
    let advantages = normalize_advantages(&batch.advantages);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mb = config.minibatches.min(batch.len());
    let mut stats = UpdateStats::default();
    let mut count = 0.0;

    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in 0..mb {
            let lo = chunk * batch.len() / mb;
            let hi = (chunk + 1) * batch.len() / mb;
            let idx = &order[lo..hi];
            let (loss, mut grad) = minibatch_gradient(params, batch, &advantages, idx, config)?;
            let gnorm = grad.norm();
            if !loss.total(config).is_finite() || !gnorm.is_finite() {
                *params = backup.0;
                *opt = backup.1;
                return Err(PolicyError::NonFiniteLoss);
            }
            if gnorm > config.max_grad_norm {
                grad.scale(config.max_grad_norm / gnorm);
            }
            opt.policy.step(params.policy.params_mut(), &grad.policy);
            opt.log_std.step(&mut params.log_std, &grad.log_std);
            opt.value.step(params.value.params_mut(), &grad.value);
            params.clamp_log_std();

            stats.surrogate_loss += -loss.surrogate;
            stats.value_loss += loss.value;
            stats.kl += loss.kl;
            stats.clip_fraction += loss.clipped as f64 / idx.len() as f64;
            count += 1.0;
        }
    }
    stats.surrogate_loss /= count;
    stats.value_loss /= count;
    stats.kl /= count;
    stats.clip_fraction /= count;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_batch(params: &PolicyParams, n: usize, seed: u64) -> RolloutBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batch = RolloutBatch::default();
        for _ in 0..n {
            let mut obs = [0.0; OBS_DIM];
            obs.iter_mut().for_each(|o| *o = rng.gen_range(-1.0..1.0));
            let (mean, log_std) = params.forward_policy(&obs).unwrap();
            let mut a = [0.0; ACTION_DIM];
            for k in 0..ACTION_DIM {
                a[k] = mean[k] + log_std[k].exp() * rng.gen_range(-1.5..1.5);
            }
            batch.log_probs.push(gaussian_log_prob(&a, &mean, &log_std));
            batch.returns.push(params.forward_value(&obs).unwrap());
            batch.obs.push(obs);
            batch.actions.push(a);
            batch.advantages.push(0.0);
        }
        batch
    }

    #[test]
    fn surrogate_clip_branches() {
        assert_eq!(clipped_surrogate(1.3, 1.0, 0.2), (1.2, 0.0));
        assert_eq!(clipped_surrogate(1.1, 1.0, 0.2), (1.1, 1.1));
        assert_eq!(clipped_surrogate(0.7, -1.0, 0.2), (-0.8, 0.0));
        let (s, d) = clipped_surrogate(1.3, -1.0, 0.2);
        assert_eq!((s, d), (-1.3, -1.3));
    }

    #[test]
    fn zero_advantage_perfect_value_leaves_params_unchanged() {
        let mut params = PolicyParams::init(&[16, 16], -0.5, 3);
        let before = params.clone();
        let batch = random_batch(&params, 64, 4);
        let cfg = PpoConfig { hidden: vec![16, 16], ..PpoConfig::default() };
        let mut opt = PpoOptimizer::new(&params, cfg.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        ppo_update(&mut params, &mut opt, &batch, &cfg, &mut rng).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn clipped_sample_has_no_policy_gradient() {
        let params = PolicyParams::init(&[16], -0.5, 8);
        let mut batch = random_batch(&params, 1, 9);
        batch.log_probs[0] -= 1.3f64.ln();
        let cfg = PpoConfig::default();
        let (loss, grad) = minibatch_gradient(&params, &batch, &[1.0], &[0], &cfg).unwrap();
        assert!((loss.surrogate - 1.2).abs() < 1e-12);
        assert!(grad.policy.iter().all(|g| *g == 0.0));
        assert!(grad.log_std.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn identical_seeds_identical_updates() {
        let run = || {
            let mut params = PolicyParams::init(&[16, 16], -0.5, 3);
            let mut batch = random_batch(&params, 96, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            batch.advantages.iter_mut().for_each(|a| *a = rng.gen_range(-1.0..1.0));
            batch.returns.iter_mut().for_each(|r| *r += rng.gen_range(-1.0..1.0));
            let cfg = PpoConfig::default();
            let mut opt = PpoOptimizer::new(&params, cfg.learning_rate);
            let stats = ppo_update(&mut params, &mut opt, &batch, &cfg, &mut rng).unwrap();
            (params, stats)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert!(sa.kl.is_finite());
    }

    #[test]
    fn non_finite_loss_restores_params() {
        let mut params = PolicyParams::init(&[8], -0.5, 3);
        let before = params.clone();
        let mut batch = random_batch(&params, 8, 4);
        batch.returns[2] = f64::NAN;
        let cfg = PpoConfig::default();
        let mut opt = PpoOptimizer::new(&params, cfg.learning_rate);
        let r = ppo_update(&mut params, &mut opt, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(PolicyError::NonFiniteLoss)));
        assert_eq!(params, before);
    }

    #[test]
    fn ragged_batch_is_rejected() {
        let mut params = PolicyParams::init(&[8], -0.5, 3);
        let mut batch = random_batch(&params, 4, 4);
        batch.returns.pop();
        let cfg = PpoConfig::default();
        let mut opt = PpoOptimizer::new(&params, cfg.learning_rate);
        assert!(ppo_update(&mut params, &mut opt, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
