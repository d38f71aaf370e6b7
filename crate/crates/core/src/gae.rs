//! Generalized advantage estimation.

use crate::error::PolicyError;

/// Advantages and returns for one environment's rollout segment.
///
/// `values` has one more entry than `rewards`: the last one bootstraps the
/// segment. `dones[t]` marks that the episode ended after step `t`, which
/// cuts both the bootstrap and the advantage recursion.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    let n = rewards.len();
    if values.len() != n + 1 {
        return Err(PolicyError::Length { what: format!("values has {} entries, need rewards + 1 = {}", values.len(), n + 1) });
    }
    if dones.len() != n {
        return Err(PolicyError::Length { what: format!("dones has {} entries, rewards has {n}", dones.len()) });
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
