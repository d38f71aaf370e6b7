//! Policy and value networks, the diagonal Gaussian action distribution,
//! and policy checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::DesignVector;
use crate::error::PolicyError;
use crate::nn::Mlp;
use crate::rewards::{CommandFrame, OBS_DIM, OBS_LAYOUT};
use crate::sim::{Action, ACTION_DIM};

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Policy mean network, state-independent log-std, and value network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub policy: Mlp,
    pub log_std: Vec<f64>,
    pub value: Mlp,
}

impl PolicyParams {
    pub fn init(hidden: &[usize], init_log_std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy_sizes: Vec<usize> = std::iter::once(OBS_DIM).chain(hidden.iter().copied()).chain([ACTION_DIM]).collect();
        let value_sizes: Vec<usize> = std::iter::once(OBS_DIM).chain(hidden.iter().copied()).chain([1]).collect();
        let policy = Mlp::init(&policy_sizes, 0.01, &mut rng);
        let value = Mlp::init(&value_sizes, 1.0, &mut rng);
        Self { policy, log_std: vec![init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); ACTION_DIM], value }
    }

    /// Action mean and log-std for one observation.
    pub fn forward_policy(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
        Ok((self.policy.predict(obs)?, self.log_std.clone()))
    }

    pub fn forward_value(&self, obs: &[f64]) -> Result<f64, PolicyError> {
        Ok(self.value.predict(obs)?[0])
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.policy.params().iter().chain(&self.log_std).chain(self.value.params()).all(|v| v.is_finite())
    }
}

/// `log N(a; mean, diag(exp(log_std)^2))`.
pub fn gaussian_log_prob(a: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let mut lp = 0.0;
    for i in 0..a.len() {
        let z = (a[i] - mean[i]) * (-log_std[i]).exp();
        lp += -0.5 * z * z - log_std[i] - 0.5 * LN_2PI;
    }
    lp
}

/// Gradient of [`gaussian_log_prob`] with respect to the mean and the log-std.
pub fn gaussian_log_prob_grad(a: &[f64], mean: &[f64], log_std: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = vec![0.0; a.len()];
    let mut d_log_std = vec![0.0; a.len()];
    for i in 0..a.len() {
        let inv_var = (-2.0 * log_std[i]).exp();
        let diff = a[i] - mean[i];
        d_mean[i] = diff * inv_var;
        d_log_std[i] = diff * diff * inv_var - 1.0;
    }
    (d_mean, d_log_std)
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (LN_2PI + 1.0)).sum()
}

/// Anything that maps an observation to a raw action.
pub trait Controller {
    fn act(&mut self, obs: &[f64; OBS_DIM]) -> Action;

    /// Called at the start of every trial.
    fn reset(&mut self) {}
}

/// Deterministic controller that applies the policy mean.
#[derive(Debug, Clone)]
pub struct MeanPolicy {
    pub params: PolicyParams,
}

impl Controller for MeanPolicy {
    fn act(&mut self, obs: &[f64; OBS_DIM]) -> Action {
        let mean = self.params.policy.predict(obs).expect("observation width is fixed");
        let mut a = [0.0; ACTION_DIM];
        a.copy_from_slice(&mean);
        Action(a)
    }
}

pub const CHECKPOINT_FORMAT: &str = "skate-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Observation and action layout the networks were trained against.
pub fn layout_fingerprint() -> String {
    format!("obs{OBS_DIM}:{OBS_LAYOUT}|act{ACTION_DIM}:leg-major(vx,vy,stance)x4")
}

/// What a checkpoint was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub design: DesignVector,
    pub frame: CommandFrame,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    fingerprint: String,
    meta: CheckpointMeta,
    policy: NetworkFile,
    log_std: Vec<f64>,
    value: NetworkFile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, PolicyError> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            fingerprint: layout_fingerprint(),
            meta: self.meta.clone(),
            policy: NetworkFile { sizes: self.params.policy.sizes().to_vec(), params: self.params.policy.params().to_vec() },
            log_std: self.params.log_std.clone(),
            value: NetworkFile { sizes: self.params.value.sizes().to_vec(), params: self.params.value.params().to_vec() },
        };
        Ok(serde_json::to_string(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(PolicyError::Malformed(format!("unknown format `{}`", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Version(file.version));
        }
        let expected = layout_fingerprint();
        if file.fingerprint != expected {
            return Err(PolicyError::Fingerprint { found: file.fingerprint, expected });
        }
        let policy = Mlp::from_parts(file.policy.sizes, file.policy.params)?;
        let value = Mlp::from_parts(file.value.sizes, file.value.params)?;
        if policy.input_dim() != OBS_DIM || value.input_dim() != OBS_DIM {
            return Err(PolicyError::Dimension { expected: OBS_DIM, got: policy.input_dim() });
        }
        if policy.output_dim() != ACTION_DIM || file.log_std.len() != ACTION_DIM {
            return Err(PolicyError::Dimension { expected: ACTION_DIM, got: policy.output_dim() });
        }
        if value.output_dim() != 1 {
            return Err(PolicyError::Dimension { expected: 1, got: value.output_dim() });
        }
        Ok(Self { params: PolicyParams { policy, log_std: file.log_std, value }, meta: file.meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let text = self.to_json()?;
        let io = |source| PolicyError::Io { path: path.to_path_buf(), source };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(text.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = fs::read_to_string(path).map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_prob_matches_closed_form() {
        let lp = gaussian_log_prob(&[0.0], &[0.0], &[0.0]);
        assert!((lp + 0.5 * LN_2PI).abs() < 1e-15);
        let lp = gaussian_log_prob(&[1.0, -1.0], &[0.0, 0.0], &[0.0, 2f64.ln()]);
        let expected = -0.5 - 0.5 * LN_2PI + (-0.125 - 2f64.ln() - 0.5 * LN_2PI);
        assert!((lp - expected).abs() < 1e-14);
    }

    #[test]
    fn deterministic_init_and_forward() {
        let a = PolicyParams::init(&[64, 64], -0.5, 42);
        let b = PolicyParams::init(&[64, 64], -0.5, 42);
        assert_eq!(a, b);
        let obs = [0.1; OBS_DIM];
        assert_eq!(a.forward_policy(&obs).unwrap(), b.forward_policy(&obs).unwrap());
        assert!(a.forward_value(&obs).unwrap().is_finite());
        assert!(a.forward_policy(&[0.0; 3]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_fingerprint() {
        let ck = Checkpoint {
            params: PolicyParams::init(&[8], 0.0, 1),
            meta: CheckpointMeta { design: DesignVector::new(-0.5, 0.5, 0.5, -0.5), frame: CommandFrame::BaseFrame, seed: 1 },
        };
        let text = ck.to_json().unwrap();
        assert_eq!(Checkpoint::from_json(&text).unwrap(), ck);
        let tampered = text.replace("obs26", "obs27");
        assert!(matches!(Checkpoint::from_json(&tampered), Err(PolicyError::Fingerprint { .. })));
    }
}
