//! Observations, tracking rewards, cost of transport and the Monte Carlo
//! design metric.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::RewardError;
use crate::sim::{norm, rotate, SimParams, SimState, StepInfo, Vec2, ACTION_DIM};

/// Frame the linear velocity command is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommandFrame {
    BaseFrame,
    WorldFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    /// m/s, expressed in `frame`.
    pub linear: Vec2,
    pub frame: CommandFrame,
    /// rad/s, body yaw rate.
    pub yaw_rate: f64,
}

impl Command {
    pub fn new(linear: Vec2, yaw_rate: f64, frame: CommandFrame) -> Self {
        Self { linear, frame, yaw_rate }
    }

    pub fn stop(frame: CommandFrame) -> Self {
        Self::new([0.0, 0.0], 0.0, frame)
    }

    pub fn mirrored(&self) -> Self {
        Self { linear: [self.linear[0], -self.linear[1]], frame: self.frame, yaw_rate: -self.yaw_rate }
    }
}

/// Signed term weights (penalties carry negative weights) and the tracking
/// shape parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub lin_vel: f64,
    pub yaw_rate: f64,
    pub action_rate: f64,
    pub effort: f64,
    pub leg_extension: f64,
    pub workspace: f64,
    /// Width of the exponential tracking kernel.
    pub sigma: f64,
    /// m/s, below this linear error yaw tracking is fully weighted.
    pub e0: f64,
    /// m/s, above this linear error yaw tracking is switched off.
    pub e1: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lin_vel: 1.5,
            yaw_rate: 0.75,
            action_rate: -0.01,
            effort: -2.0e-4,
            leg_extension: -1.0,
            workspace: -10.0,
            sigma: 0.25,
            e0: 0.3,
            e1: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma > 0.0) {
            return Err("sigma must be > 0".into());
        }
        if !(0.0 <= self.e0 && self.e0 < self.e1) {
            return Err("e0 must satisfy 0 <= e0 < e1".into());
        }
        Ok(())
    }
}

pub const OBS_DIM: usize = 26;

/// Observation layout, in order:
/// body linear velocity (2), yaw rate (1), commanded velocity in the body
/// frame (2), yaw-rate command (1), leg offsets divided by the workspace
/// radius (8), previous clamped action (12).
pub const OBS_LAYOUT: &str = "vb2,wz1,cmdb2,cmdwz1,legs8/pmax,prev12";

/// Commanded linear velocity as the policy sees it: always in the body frame.
pub fn command_observation(command: &Command, theta: f64) -> Vec2 {
    match command.frame {
        CommandFrame::BaseFrame => command.linear,
        CommandFrame::WorldFrame => rotate(command.linear, -theta),
    }
}

pub fn observe(state: &SimState, command: &Command, params: &SimParams) -> [f64; OBS_DIM] {
    let mut o = [0.0; OBS_DIM];
    let vb = state.body_velocity();
    let cmd = command_observation(command, state.theta);
    o[0] = vb[0];
    o[1] = vb[1];
    o[2] = state.omega;
    o[3] = cmd[0];
    o[4] = cmd[1];
    o[5] = command.yaw_rate;
    let scale = 1.0 / params.leg_workspace_radius;
    for (leg, p) in state.legs.iter().enumerate() {
        o[6 + 2 * leg] = p[0] * scale;
        o[7 + 2 * leg] = p[1] * scale;
    }
    o[14..14 + ACTION_DIM].copy_from_slice(&state.prev_action);
    o
}

/// `exp(-e^2 / sigma)`.
pub fn r_exp(e: f64, sigma: f64) -> f64 {
    (-e * e / sigma).exp()
}

/// Yaw-tracking weight that hands priority to linear tracking as the linear
/// error grows: 1 up to `e0`, linear down to 0 at `e1`, 0 beyond.
pub fn priority_factor(v_err: f64, e0: f64, e1: f64) -> f64 {
    if v_err <= e0 {
        1.0
    } else if v_err <= e1 {
        (e1 - v_err) / (e1 - e0)
    } else {
        0.0
    }
}

/// Linear velocity tracking error, measured in the command's frame.
pub fn linear_error(state: &SimState, command: &Command) -> f64 {
    let v = match command.frame {
        CommandFrame::BaseFrame => state.body_velocity(),
        CommandFrame::WorldFrame => state.world_velocity(),
    };
    norm([v[0] - command.linear[0], v[1] - command.linear[1]])
}

/// Weighted reward terms of one control step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub lin_vel: f64,
    pub yaw_rate: f64,
    pub action_rate: f64,
    pub effort: f64,
    pub leg_extension: f64,
    pub workspace: f64,
}

impl RewardTerms {
    pub const NAMES: [&'static str; 6] =
        ["lin_vel", "yaw_rate", "action_rate", "effort", "leg_extension", "workspace"];

    pub fn as_array(&self) -> [f64; 6] {
        [self.lin_vel, self.yaw_rate, self.action_rate, self.effort, self.leg_extension, self.workspace]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            lin_vel: a[0],
            yaw_rate: a[1],
            action_rate: a[2],
            effort: a[3],
            leg_extension: a[4],
            workspace: a[5],
        }
    }

    /// Sum of the terms in declaration order.
    pub fn total(&self) -> f64 {
        self.as_array().iter().fold(0.0, |acc, v| acc + v)
    }
}

/// Reward for the transition that ended in `state`.
///
/// `action` is the clamped action just applied and `prev_action` the one
/// before it; `info` carries the torque proxy and workspace excess of the step.
pub fn step_reward(
    state: &SimState,
    info: &StepInfo,
    action: &[f64; ACTION_DIM],
    prev_action: &[f64; ACTION_DIM],
    command: &Command,
    weights: &RewardWeights,
    mode: CommandFrame,
) -> Result<(f64, RewardTerms), RewardError> {
    if command.frame != mode {
        return Err(RewardError::FrameMismatch { mode, frame: command.frame });
    }
    let v_err = linear_error(state, command);
    let yaw_track = r_exp(state.omega - command.yaw_rate, weights.sigma);
    let yaw_scale = match mode {
        CommandFrame::BaseFrame => 1.0,
        CommandFrame::WorldFrame => priority_factor(v_err, weights.e0, weights.e1),
    };
    let action_rate: f64 = action.iter().zip(prev_action).map(|(a, b)| (a - b) * (a - b)).sum();
    let leg_ext: f64 = state.legs.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
    let excess: f64 = info.workspace_excess.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();

    let terms = RewardTerms {
        lin_vel: weights.lin_vel * r_exp(v_err, weights.sigma),
        yaw_rate: weights.yaw_rate * yaw_scale * yaw_track,
        action_rate: weights.action_rate * action_rate,
        effort: weights.effort * info.torque_sq,
        leg_extension: weights.leg_extension * leg_ext,
        workspace: weights.workspace * excess,
    };
    Ok((terms.total(), terms))
}

/// Planar twist `(v_x, v_y, omega)`; linear part in the body frame for
/// base-frame commands and in the world frame for world-frame commands.
pub fn twist(state: &SimState, mode: CommandFrame) -> [f64; 3] {
    let v = match mode {
        CommandFrame::BaseFrame => state.body_velocity(),
        CommandFrame::WorldFrame => state.world_velocity(),
    };
    [v[0], v[1], state.omega]
}

/// Cost of transport settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// m/s, floor on the twist norm in the CoT denominator.
    pub v_floor: f64,
    /// Added to J per unit fraction of cells whose linear error exceeds `e1`.
    pub fail_penalty: f64,
    /// Steps per environment in the metric window.
    pub window_steps: usize,
    /// J recorded for a design whose training failed.
    pub failure_j: f64,
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.v_floor > 0.0) {
            return Err("v_floor must be > 0".into());
        }
        if !(self.fail_penalty >= 0.0 && self.failure_j.is_finite()) {
            return Err("fail_penalty must be >= 0 and failure_j finite".into());
        }
        Ok(())
    }
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { v_floor: 0.1, fail_penalty: 10.0, window_steps: 1000, failure_j: 100.0 }
    }
}

/// `|tau|^2 / (m g max(|xi|, v_floor))`.
pub fn instantaneous_cot(torque_sq: f64, twist: [f64; 3], params: &SimParams, v_floor: f64) -> f64 {
    let speed = (twist[0] * twist[0] + twist[1] * twist[1] + twist[2] * twist[2]).sqrt();
    torque_sq / (params.weight() * speed.max(v_floor))
}

/// One (env, step) cell of the metric window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub cot: f64,
    pub v_err: f64,
}

impl MetricCell {
    pub fn from_step(state: &SimState, info: &StepInfo, command: &Command, params: &SimParams, v_floor: f64) -> Self {
        Self {
            cot: instantaneous_cot(info.torque_sq, twist(state, command.frame), params, v_floor),
            v_err: linear_error(state, command),
        }
    }
}

/// Sliding window of the most recent `n_step` cells of each environment.
#[derive(Debug, Clone)]
pub struct MetricWindow {
    n_step: usize,
    cells: Vec<VecDeque<MetricCell>>,
}

impl MetricWindow {
    pub fn new(n_env: usize, n_step: usize) -> Self {
        Self { n_step, cells: (0..n_env).map(|_| VecDeque::with_capacity(n_step)).collect() }
    }

    pub fn n_env(&self) -> usize {
        self.cells.len()
    }

    pub fn n_step(&self) -> usize {
        self.n_step
    }

    pub fn push(&mut self, env: usize, cell: MetricCell) {
        let q = &mut self.cells[env];
        if q.len() == self.n_step {
            q.pop_front();
        }
        q.push_back(cell);
    }

    pub fn env_cells(&self, env: usize) -> impl Iterator<Item = &MetricCell> {
        self.cells[env].iter()
    }

    pub fn is_complete(&self) -> bool {
        self.n_step > 0 && self.cells.iter().all(|q| q.len() == self.n_step)
    }

    /// Reorders environments; used to check reduction-order sensitivity.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self { n_step: self.n_step, cells: order.iter().map(|&i| self.cells[i].clone()).collect() }
    }
}

/// Monte Carlo design metric: mean CoT over every (env, step) cell plus
/// `fail_penalty` times the fraction of cells with linear error above `e1`.
/// Cells are reduced env-major, then by step.
pub fn estimate_design_metric(window: &MetricWindow, e1: f64, fail_penalty: f64) -> Result<f64, RewardError> {
    if window.n_env() == 0 || window.n_step == 0 {
        return Err(RewardError::EmptyBuffer);
    }
    for (env, q) in window.cells.iter().enumerate() {
        if q.len() != window.n_step {
            return Err(RewardError::IncompleteBuffer { env, got: q.len(), expected: window.n_step });
        }
    }
    let mut sum = 0.0;
    let mut failures = 0usize;
    for q in &window.cells {
        for cell in q {
            sum += cell.cot;
            if cell.v_err > e1 {
                failures += 1;
            }
        }
    }
    let count = (window.n_env() * window.n_step) as f64;
    Ok(sum / count + fail_penalty * failures as f64 / count)
}
