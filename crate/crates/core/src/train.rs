//! Inner loop: vectorized rollout collection and PPO training for a fixed
//! wheel design.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::DesignVector;
use crate::error::PolicyError;
use crate::nn::BatchCache;
use crate::gae::gae;
use crate::policy::{gaussian_log_prob, PolicyParams};
use crate::ppo::{ppo_update, PpoConfig, PpoOptimizer, RolloutBatch};
use crate::rewards::{
    estimate_design_metric, observe, step_reward, Command, CommandFrame, MetricCell, MetricConfig, MetricWindow,
    RewardTerms, RewardWeights, OBS_DIM,
};
use crate::sim::{
    reset_with_rng, step, trajectory_record, Action, ResetConfig, SimParams, SimState, TrajectoryRecord, ACTION_DIM,
};

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Command distribution and episode structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub frame: CommandFrame,
    /// m/s
    pub speed_min: f64,
    pub speed_max: f64,
    /// rad, direction of the linear command in its frame
    pub direction_min: f64,
    pub direction_max: f64,
    /// rad/s
    pub yaw_rate_min: f64,
    pub yaw_rate_max: f64,
    /// Fraction of command draws replaced by a full stop.
    pub stop_probability: f64,
    pub resample_steps: usize,
    pub episode_steps: usize,
    pub reset: ResetConfig,
    /// m/s; faster bodies count as diverged and are reset.
    pub divergence_speed: f64,
    /// Diverged episodes over finished episodes above which training fails.
    pub max_divergence_rate: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            frame: CommandFrame::BaseFrame,
            speed_min: 0.0,
            speed_max: 2.0,
            direction_min: 0.0,
            direction_max: 2.0 * PI,
            yaw_rate_min: -1.0,
            yaw_rate_max: 1.0,
            stop_probability: 0.0,
            resample_steps: 200,
            episode_steps: 1000,
            reset: ResetConfig::default(),
            divergence_speed: 10.0,
            max_divergence_rate: 0.1,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max) {
            return Err("speed_min must satisfy 0 <= speed_min <= speed_max".into());
        }
        if self.direction_min > self.direction_max || self.yaw_rate_min > self.yaw_rate_max {
            return Err("direction_min and yaw_rate_min must not exceed their max".into());
        }
        if !(0.0..=1.0).contains(&self.stop_probability) {
            return Err("stop_probability must lie in [0, 1]".into());
        }
        if self.resample_steps == 0 || self.episode_steps == 0 {
            return Err("resample_steps and episode_steps must be >= 1".into());
        }
        Ok(())
    }

    pub fn sample_command(&self, rng: &mut ChaCha8Rng) -> Command {
        let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let speed = uniform(rng, self.speed_min, self.speed_max);
        let dir = uniform(rng, self.direction_min, self.direction_max);
        let yaw = uniform(rng, self.yaw_rate_min, self.yaw_rate_max);
        let stop = self.stop_probability > 0.0 && rng.gen_bool(self.stop_probability);
        if stop {
            Command::new([0.0, 0.0], 0.0, self.frame)
        } else {
            Command::new([speed * dir.cos(), speed * dir.sin()], yaw, self.frame)
        }
    }
}

/// What one environment step hands back to the learner.
#[derive(Debug, Clone)]
pub struct Transition {
    pub reward: f64,
    pub terms: RewardTerms,
    /// Episode ended; the next observation belongs to a fresh episode.
    pub done: bool,
    /// Observation the episode ended in when it was cut by the time limit.
    /// Its value is bootstrapped into the reward.
    pub truncated_obs: Option<[f64; OBS_DIM]>,
    pub diverged: bool,
    pub cell: Option<MetricCell>,
    /// Post-step record, filled when the environment records trajectories.
    pub record: Option<TrajectoryRecord>,
}

/// A batch of independent environments stepped in index order.
pub trait VecEnv {
    fn n_env(&self) -> usize;
    fn observe(&self, env: usize) -> [f64; OBS_DIM];
    fn step(&mut self, env: usize, action: &Action) -> Result<Transition, PolicyError>;
}

/// Skating environments sharing one design.
#[derive(Debug, Clone)]
pub struct SkateVecEnv {
    pub design: DesignVector,
    pub sim: SimParams,
    pub weights: RewardWeights,
    pub task: TaskConfig,
    pub metric: MetricConfig,
    /// Attach a [`TrajectoryRecord`] to every transition.
    pub record: bool,
    states: Vec<SimState>,
    commands: Vec<Command>,
    episode_step: Vec<usize>,
    since_resample: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
}

impl SkateVecEnv {
    pub fn new(
        n_env: usize,
        design: DesignVector,
        sim: SimParams,
        weights: RewardWeights,
        task: TaskConfig,
        metric: MetricConfig,
        seed: u64,
    ) -> Self {
        let mut rngs: Vec<ChaCha8Rng> =
            (0..n_env).map(|i| ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EED_0000 + i as u64))).collect();
        let mut states = Vec::with_capacity(n_env);
        let mut commands = Vec::with_capacity(n_env);
        let mut episode_step = Vec::with_capacity(n_env);
        let mut since_resample = Vec::with_capacity(n_env);
        for rng in rngs.iter_mut() {
            states.push(reset_with_rng(rng, &task.reset, &sim));
            commands.push(task.sample_command(rng));
            // Staggered episode clocks so resets are spread over time.
            episode_step.push(rng.gen_range(0..task.episode_steps));
            since_resample.push(rng.gen_range(0..task.resample_steps));
        }
        Self { design, sim, weights, task, metric, record: false, states, commands, episode_step, since_resample, rngs }
    }

    pub fn state(&self, env: usize) -> &SimState {
        &self.states[env]
    }

    pub fn command(&self, env: usize) -> &Command {
        &self.commands[env]
    }

    pub fn set_command(&mut self, env: usize, command: Command) {
        self.commands[env] = command;
    }

    fn restart(&mut self, env: usize) {
        self.states[env] = reset_with_rng(&mut self.rngs[env], &self.task.reset, &self.sim);
        self.commands[env] = self.task.sample_command(&mut self.rngs[env]);
        self.episode_step[env] = 0;
        self.since_resample[env] = 0;
    }
}

impl VecEnv for SkateVecEnv {
    fn n_env(&self) -> usize {
        self.states.len()
    }

    fn observe(&self, env: usize) -> [f64; OBS_DIM] {
        observe(&self.states[env], &self.commands[env], &self.sim)
    }

    fn step(&mut self, env: usize, action: &Action) -> Result<Transition, PolicyError> {
        let prev = self.states[env].prev_action;
        let (next, info) = step(&self.states[env], action, &self.design, &self.sim)?;
        let command = self.commands[env];
        let diverged = !next.is_finite() || next.speed() > self.task.divergence_speed;
        if diverged {
            self.restart(env);
            return Ok(Transition {
                reward: 0.0,
                terms: RewardTerms::default(),
                done: true,
                truncated_obs: None,
                diverged: true,
                cell: None,
                record: None,
            });
        }
        let (reward, terms) = step_reward(&next, &info, &next.prev_action, &prev, &command, &self.weights, self.task.frame)?;
        let cell = MetricCell::from_step(&next, &info, &command, &self.sim, self.metric.v_floor);
        self.episode_step[env] += 1;
        let record = self
            .record
            .then(|| trajectory_record(self.episode_step[env] as f64 * self.sim.dt, &next, &info, &command));
        self.states[env] = next;
        self.since_resample[env] += 1;

        let mut truncated_obs = None;
        let mut done = false;
        if self.episode_step[env] >= self.task.episode_steps {
            truncated_obs = Some(self.observe(env));
            done = true;
            self.restart(env);
        } else if self.since_resample[env] >= self.task.resample_steps {
            self.commands[env] = self.task.sample_command(&mut self.rngs[env]);
            self.since_resample[env] = 0;
        }
        Ok(Transition { reward, terms, done, truncated_obs, diverged: false, cell: Some(cell), record })
    }
}

/// One PPO update's diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub update: usize,
    pub env_steps: u64,
    pub mean_reward: f64,
    pub term_means: RewardTerms,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub mean_std: f64,
    /// Design metric over the window so far, once the window is full.
    pub window_j: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<UpdateLog>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(|e| serde_json::to_string(e).expect("log entries serialize") + "\n").collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: TrainingLog,
    /// Design metric of the final window; the failure sentinel when training failed;
    /// `None` when no steps were taken.
    pub j: Option<f64>,
    pub failed: bool,
    pub divergence_rate: f64,
    pub window: MetricWindow,
}

/// Collects rollouts from `env` and runs PPO until `config.total_steps`
/// environment steps have been taken (rounded down to whole updates).
///
/// The metric window records the last `window_steps` steps of each env.
pub fn run_ppo<E: VecEnv>(
    env: &mut E,
    params: &mut PolicyParams,
    config: &PpoConfig,
    window_steps: usize,
    seed: u64,
    e1: f64,
    fail_penalty: f64,
) -> Result<(TrainingLog, MetricWindow, u64, u64), PolicyError> {
    let n_env = env.n_env();
    let horizon = config.horizon;
    let per_update = (n_env * horizon) as u64;
    let n_updates = config.total_steps.checked_div(per_update).unwrap_or(0);
    let window_len = window_steps.min(n_updates as usize * horizon);
    let mut window = MetricWindow::new(n_env, window_len);

    let mut opt = PpoOptimizer::new(params, config.learning_rate);
    let mut learner_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x1EA7));
    let mut noise: Vec<ChaCha8Rng> =
        (0..n_env).map(|i| ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xA0_0000 + i as u64))).collect();
    let mut log = TrainingLog::default();
    let mut episodes_done = 0u64;
    let mut diverged = 0u64;

    let n = horizon * n_env;
    let mut obs_buf = vec![[0.0; OBS_DIM]; n];
    let mut act_buf = vec![[0.0; ACTION_DIM]; n];
    let mut logp_buf = vec![0.0; n];
    let mut val_buf = vec![0.0; n];
    let mut rew_buf = vec![0.0; n];
    let mut done_buf = vec![false; n];
    let mut pcache = BatchCache::default();
    let mut vcache = BatchCache::default();

    for update in 0..n_updates as usize {
        let mut reward_sum = 0.0;
        let mut term_sum = [0.0; 6];
        for t in 0..horizon {
            let base = t * n_env;
            for e in 0..n_env {
                obs_buf[base + e] = env.observe(e);
            }
            let flat: Vec<f64> = obs_buf[base..base + n_env].iter().flatten().copied().collect();
            let means = params.policy.forward_batch(&flat, n_env, &mut pcache)?.to_vec();
            val_buf[base..base + n_env].copy_from_slice(params.value.forward_batch(&flat, n_env, &mut vcache)?);
            for e in 0..n_env {
                let k = base + e;
                let mean = &means[e * ACTION_DIM..(e + 1) * ACTION_DIM];
                let mut a = [0.0; ACTION_DIM];
                for i in 0..ACTION_DIM {
                    let z: f64 = noise[e].sample(StandardNormal);
                    a[i] = mean[i] + params.log_std[i].exp() * z;
                }
                logp_buf[k] = gaussian_log_prob(&a, mean, &params.log_std);
                act_buf[k] = a;

                let tr = env.step(e, &Action(a))?;
                let mut r = tr.reward * config.reward_scale;
                if let Some(last) = tr.truncated_obs {
                    r += config.gamma * params.forward_value(&last)?;
                }
                rew_buf[k] = r;
                done_buf[k] = tr.done;
                reward_sum += tr.reward;
                for (acc, v) in term_sum.iter_mut().zip(tr.terms.as_array()) {
                    *acc += v;
                }
                if tr.done {
                    episodes_done += 1;
                }
                if tr.diverged {
                    diverged += 1;
                }
                if let Some(cell) = tr.cell {
                    if window_len > 0 {
                        window.push(e, cell);
                    }
                }
            }
        }

        let mut batch = RolloutBatch {
            obs: obs_buf.clone(),
            actions: act_buf.clone(),
            log_probs: logp_buf.clone(),
            advantages: vec![0.0; n],
            returns: vec![0.0; n],
        };
        let mut rewards = vec![0.0; horizon];
        let mut values = vec![0.0; horizon + 1];
        let mut dones = vec![false; horizon];
        let last: Vec<f64> = (0..n_env).flat_map(|e| env.observe(e)).collect();
        let bootstrap = params.value.forward_batch(&last, n_env, &mut vcache)?.to_vec();
        for e in 0..n_env {
            for t in 0..horizon {
                let k = t * n_env + e;
                rewards[t] = rew_buf[k];
                values[t] = val_buf[k];
                dones[t] = done_buf[k];
            }
            values[horizon] = bootstrap[e];
            let (adv, ret) = gae(&rewards, &values, &dones, config.gamma, config.lambda)?;
            for t in 0..horizon {
                batch.advantages[t * n_env + e] = adv[t];
                batch.returns[t * n_env + e] = ret[t];
            }
        }

        let stats = ppo_update(params, &mut opt, &batch, config, &mut learner_rng)?;
        let inv = 1.0 / n as f64;
        log.entries.push(UpdateLog {
            update,
            env_steps: (update as u64 + 1) * per_update,
            mean_reward: reward_sum * inv,
            term_means: RewardTerms::from_array(term_sum.map(|v| v * inv)),
            surrogate_loss: stats.surrogate_loss,
            value_loss: stats.value_loss,
            kl: stats.kl,
            clip_fraction: stats.clip_fraction,
            mean_std: params.log_std.iter().map(|s| s.exp()).sum::<f64>() / ACTION_DIM as f64,
            window_j: if window.is_complete() { estimate_design_metric(&window, e1, fail_penalty).ok() } else { None },
        });
    }
    Ok((log, window, episodes_done, diverged))
}

/// Inner-loop settings bundled for [`train_policy`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerLoopConfig {
    pub sim: SimParams,
    pub task: TaskConfig,
    pub rewards: RewardWeights,
    pub metric: MetricConfig,
    pub ppo: PpoConfig,
}

/// Trains a policy for `design` and scores the design on the final metric window.
pub fn train_policy(design: &DesignVector, cfg: &InnerLoopConfig, seed: u64) -> Result<TrainOutcome, PolicyError> {
    let params = PolicyParams::init(&cfg.ppo.hidden, cfg.ppo.init_log_std, mix_seed(seed, 0x1217));
    train_policy_from(params, design, cfg, seed)
}

/// [`train_policy`] starting from existing parameters, e.g. a policy trained
/// on an easier task.
pub fn train_policy_from(
    mut params: PolicyParams,
    design: &DesignVector,
    cfg: &InnerLoopConfig,
    seed: u64,
) -> Result<TrainOutcome, PolicyError> {
    let mut env = SkateVecEnv::new(
        cfg.ppo.n_env,
        *design,
        cfg.sim.clone(),
        cfg.rewards.clone(),
        cfg.task.clone(),
        cfg.metric.clone(),
        mix_seed(seed, 0xE17),
    );
    let result = run_ppo(
        &mut env,
        &mut params,
        &cfg.ppo,
        cfg.metric.window_steps,
        seed,
        cfg.rewards.e1,
        cfg.metric.fail_penalty,
    );
    let (log, window, episodes, diverged) = match result {
        Ok(r) => r,
        Err(PolicyError::NonFiniteLoss) => {
            return Ok(TrainOutcome {
                params,
                log: TrainingLog::default(),
                j: Some(cfg.metric.failure_j),
                failed: true,
                divergence_rate: 0.0,
                window: MetricWindow::new(0, 0),
            })
        }
        Err(e) => return Err(e),
    };
    let divergence_rate = if episodes == 0 { 0.0 } else { diverged as f64 / episodes as f64 };
    let failed = divergence_rate > cfg.task.max_divergence_rate;
    let j = if failed {
        Some(cfg.metric.failure_j)
    } else if window.is_complete() {
        Some(estimate_design_metric(&window, cfg.rewards.e1, cfg.metric.fail_penalty)?)
    } else {
        None
    };
    Ok(TrainOutcome { params, log, j, failed, divergence_rate, window })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(total_steps: u64) -> InnerLoopConfig {
        let mut cfg = InnerLoopConfig::default();
        cfg.ppo.n_env = 4;
        cfg.ppo.horizon = 8;
        cfg.ppo.hidden = vec![8];
        cfg.ppo.total_steps = total_steps;
        cfg.metric.window_steps = 16;
        cfg
    }

    #[test]
    fn zero_steps_returns_initial_params() {
        let cfg = tiny_config(0);
        let out = train_policy(&DesignVector::parallel(), &cfg, 5).unwrap();
        assert!(out.log.entries.is_empty());
        assert_eq!(out.j, None);
        assert_eq!(out.params, PolicyParams::init(&[8], cfg.ppo.init_log_std, mix_seed(5, 0x1217)));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config(4 * 8 * 3);
        let design = DesignVector::new(-0.5, 0.5, 0.5, -0.5);
        let a = train_policy(&design, &cfg, 11).unwrap();
        let b = train_policy(&design, &cfg, 11).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert_eq!(a.j, b.j);
        assert!(a.j.unwrap().is_finite());
        assert_eq!(a.log.entries.len(), 3);
        let c = train_policy(&design, &cfg, 12).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn command_sampling_respects_ranges() {
        let task = TaskConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c = task.sample_command(&mut rng);
            let s = crate::sim::norm(c.linear);
            assert!(s <= 2.0 + 1e-12 && c.yaw_rate.abs() <= 1.0);
        }
    }

    #[test]
    fn seeds_mix_apart() {
        assert_ne!(mix_seed(1, 2), mix_seed(2, 1));
        assert_eq!(mix_seed(7, 9), mix_seed(7, 9));
    }
}
