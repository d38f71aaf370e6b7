//! Reduced-order planar skating dynamics.
//!
//! The body is a rigid SE(2) object carried by four passive wheels. Legs are
//! massless: each one moves its wheel's contact point inside a disk around the
//! hip at a bounded speed and carries a share of the body weight. Passive
//! wheels show up only through an anisotropic regularized Coulomb law: cheap
//! to roll along the wheel axis `u`, expensive to slip along its normal `n`.
//!
//! Integration is semi-implicit Euler over `substeps` physics steps per
//! control step: velocities first, then pose, then leg offsets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::DesignVector;
use crate::error::SimError;

pub const NUM_LEGS: usize = 4;
pub const ACTION_DIM: usize = 3 * NUM_LEGS;
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FR", "FL", "RR", "RL"];

pub type Vec2 = [f64; 2];

#[inline]
pub fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Physical and numerical constants of the reduced model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// kg
    pub mass: f64,
    /// kg m^2
    pub yaw_inertia: f64,
    /// m, hip x offset from the body center
    pub hip_half_length: f64,
    /// m, hip y offset from the body center
    pub hip_half_width: f64,
    pub mu_lat: f64,
    pub mu_roll: f64,
    /// m/s, tanh regularization of the friction law
    pub slip_velocity: f64,
    /// m, radius of each leg's contact-point disk
    pub leg_workspace_radius: f64,
    /// m/s
    pub leg_speed_max: f64,
    /// Floor on the summed stance shares.
    pub stance_floor: f64,
    /// m, lever turning a contact force into a joint torque
    pub torque_lever: f64,
    /// N s/m
    pub leg_effort_coeff: f64,
    /// Gain applied to the clamped stance logit before the logistic.
    pub stance_gain: f64,
    pub gravity: f64,
    /// s, control period
    pub dt: f64,
    pub substeps: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            mass: 12.0,
            yaw_inertia: 0.223,
            hip_half_length: 0.19,
            hip_half_width: 0.14,
            mu_lat: 0.8,
            mu_roll: 0.02,
            slip_velocity: 0.05,
            leg_workspace_radius: 0.15,
            leg_speed_max: 1.5,
            stance_floor: 0.05,
            torque_lever: 0.25,
            leg_effort_coeff: 2.0,
            stance_gain: 4.0,
            gravity: 9.81,
            dt: 0.02,
            substeps: 16,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            (self.mass, "mass"),
            (self.yaw_inertia, "yaw_inertia"),
            (self.hip_half_length, "hip_half_length"),
            (self.hip_half_width, "hip_half_width"),
            (self.mu_lat, "mu_lat"),
            (self.mu_roll, "mu_roll"),
            (self.slip_velocity, "slip_velocity"),
            (self.leg_workspace_radius, "leg_workspace_radius"),
            (self.leg_speed_max, "leg_speed_max"),
            (self.stance_floor, "stance_floor"),
            (self.torque_lever, "torque_lever"),
            (self.leg_effort_coeff, "leg_effort_coeff"),
            (self.stance_gain, "stance_gain"),
            (self.gravity, "gravity"),
            (self.dt, "dt"),
        ];
        for (v, name) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidParam(name));
            }
        }
        if self.mu_roll >= self.mu_lat {
            return Err(SimError::InvalidParam("mu_roll"));
        }
        if self.substeps == 0 || self.substep_dt() * self.friction_stiffness_bound() > 2.0 {
            return Err(SimError::InvalidParam("substeps"));
        }
        Ok(())
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn substep_dt(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    /// Hip positions in the body frame, leg order FR, FL, RR, RL.
    pub fn hips(&self) -> [Vec2; NUM_LEGS] {
        let (l, w) = (self.hip_half_length, self.hip_half_width);
        [[l, -w], [l, w], [-l, -w], [-l, w]]
    }

    /// Upper bound on the friction-damping eigenvalue of the mass-weighted
    /// velocity update. Explicit velocity updates are energy non-increasing
    /// while `substep_dt * bound <= 2`.
    pub fn friction_stiffness_bound(&self) -> f64 {
        let r_max = norm([self.hip_half_length, self.hip_half_width]) + self.leg_workspace_radius;
        let per_unit_load = 1.0 / self.mass + r_max * r_max / self.yaw_inertia;
        self.weight() / self.slip_velocity * (self.mu_lat + self.mu_roll) * per_unit_load
    }
}

/// Full simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub x: f64,
    pub y: f64,
    /// Heading, unwrapped.
    pub theta: f64,
    /// World-frame linear velocity.
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
    /// Contact offset of each leg from its hip, body frame.
    pub legs: [Vec2; NUM_LEGS],
    /// Clamped action applied on the previous control step.
    pub prev_action: [f64; ACTION_DIM],
}

impl Default for SimState {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            vx: 0.0,
            vy: 0.0,
            omega: 0.0,
            legs: [[0.0; 2]; NUM_LEGS],
            prev_action: [0.0; ACTION_DIM],
        }
    }
}

impl SimState {
    pub fn world_velocity(&self) -> Vec2 {
        [self.vx, self.vy]
    }

    pub fn body_velocity(&self) -> Vec2 {
        rotate([self.vx, self.vy], -self.theta)
    }

    pub fn speed(&self) -> f64 {
        norm([self.vx, self.vy])
    }

    pub fn kinetic_energy(&self, params: &SimParams) -> f64 {
        0.5 * params.mass * (self.vx * self.vx + self.vy * self.vy)
            + 0.5 * params.yaw_inertia * self.omega * self.omega
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.theta, self.vx, self.vy, self.omega].iter().all(|v| v.is_finite())
            && self.legs.iter().flatten().all(|v| v.is_finite())
    }

    /// Reflection about the body's sagittal plane through the world x-axis.
    pub fn mirrored(&self) -> Self {
        let mut legs = [[0.0; 2]; NUM_LEGS];
        for (i, leg) in legs.iter_mut().enumerate() {
            let src = self.legs[mirror_leg(i)];
            *leg = [src[0], -src[1]];
        }
        Self {
            x: self.x,
            y: -self.y,
            theta: -self.theta,
            vx: self.vx,
            vy: -self.vy,
            omega: -self.omega,
            legs,
            prev_action: mirror_action_array(&self.prev_action),
        }
    }
}

/// Index of the leg on the other side of the body.
pub fn mirror_leg(i: usize) -> usize {
    i ^ 1
}

fn mirror_action_array(a: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
    let mut out = [0.0; ACTION_DIM];
    for leg in 0..NUM_LEGS {
        let src = 3 * mirror_leg(leg);
        out[3 * leg] = a[src];
        out[3 * leg + 1] = -a[src + 1];
        out[3 * leg + 2] = a[src + 2];
    }
    out
}

/// Raw policy output. Per leg: commanded contact velocity `(x, y)` in the
/// body frame and a stance logit, in leg order FR, FL, RR, RL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action(pub [f64; ACTION_DIM]);

impl Action {
    pub fn zero() -> Self {
        Self([0.0; ACTION_DIM])
    }

    pub fn component_name(index: usize) -> &'static str {
        const NAMES: [&str; ACTION_DIM] = [
            "FR.vx", "FR.vy", "FR.stance", "FL.vx", "FL.vy", "FL.stance", "RR.vx", "RR.vy",
            "RR.stance", "RL.vx", "RL.vy", "RL.stance",
        ];
        NAMES[index]
    }

    pub fn check_finite(&self) -> Result<(), SimError> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(SimError::NonFiniteAction {
                index,
                name: Self::component_name(index),
                value: self.0[index],
            }),
            None => Ok(()),
        }
    }

    /// Each component clamped to `[-1, 1]`.
    pub fn clamped(&self) -> [f64; ACTION_DIM] {
        self.0.map(|v| v.clamp(-1.0, 1.0))
    }

    pub fn mirrored(&self) -> Self {
        Self(mirror_action_array(&self.0))
    }
}

/// Body-frame commanded contact velocity of each leg after scaling, and the
/// stance share of each leg.
pub fn scale_action(clamped: &[f64; ACTION_DIM], params: &SimParams) -> ([Vec2; NUM_LEGS], [f64; NUM_LEGS]) {
    let mut vel = [[0.0; 2]; NUM_LEGS];
    let mut share = [0.0; NUM_LEGS];
    for leg in 0..NUM_LEGS {
        vel[leg] = [clamped[3 * leg] * params.leg_speed_max, clamped[3 * leg + 1] * params.leg_speed_max];
        share[leg] = logistic(params.stance_gain * clamped[3 * leg + 2]);
    }
    (vel, share)
}

/// Normal loads from stance shares; sums to `m g` whenever the shares sum to
/// at least the floor.
pub fn normal_loads(shares: &[f64; NUM_LEGS], params: &SimParams) -> [f64; NUM_LEGS] {
    let total: f64 = shares.iter().sum();
    let denom = total.max(params.stance_floor);
    shares.map(|s| params.weight() * s / denom)
}

/// Rolling axis `u` and slip normal `n` of a wheel in the world frame.
pub fn wheel_axes(psi: f64, theta: f64) -> (Vec2, Vec2) {
    let (s, c) = (theta + psi).sin_cos();
    ([c, s], [-s, c])
}

/// World position and velocity of a leg's contact point, given the leg's
/// realized body-frame velocity.
pub fn contact_kinematics(state: &SimState, leg: usize, leg_velocity: Vec2, params: &SimParams) -> (Vec2, Vec2) {
    let hip = params.hips()[leg];
    let p = state.legs[leg];
    let r = rotate([hip[0] + p[0], hip[1] + p[1]], state.theta);
    let pdot = rotate(leg_velocity, state.theta);
    let pos = [state.x + r[0], state.y + r[1]];
    let vel = [state.vx - state.omega * r[1] + pdot[0], state.vy + state.omega * r[0] + pdot[1]];
    (pos, vel)
}

/// Regularized anisotropic Coulomb force on the body from one wheel.
pub fn friction_force(contact_velocity: Vec2, load: f64, psi: f64, theta: f64, params: &SimParams) -> Vec2 {
    let (u, n) = wheel_axes(psi, theta);
    let roll = params.mu_roll * (dot(contact_velocity, u) / params.slip_velocity).tanh();
    let lat = params.mu_lat * (dot(contact_velocity, n) / params.slip_velocity).tanh();
    [-load * (roll * u[0] + lat * n[0]), -load * (roll * u[1] + lat * n[1])]
}

/// Squared joint-torque proxy: `sum_i l^2 |f_i|^2 + b^2 |pdot_i|^2`.
pub fn torque_proxy(forces_body: &[Vec2; NUM_LEGS], leg_velocities: &[Vec2; NUM_LEGS], params: &SimParams) -> f64 {
    let l2 = params.torque_lever * params.torque_lever;
    let b2 = params.leg_effort_coeff * params.leg_effort_coeff;
    forces_body
        .iter()
        .zip(leg_velocities)
        .map(|(f, v)| l2 * dot(*f, *f) + b2 * dot(*v, *v))
        .sum()
}

/// Per-wheel world-frame friction forces for the given realized leg velocities and loads.
pub fn contact_forces(
    state: &SimState,
    leg_velocities: &[Vec2; NUM_LEGS],
    loads: &[f64; NUM_LEGS],
    design: &DesignVector,
    params: &SimParams,
) -> [Vec2; NUM_LEGS] {
    let psi = design.angles();
    let mut forces = [[0.0; 2]; NUM_LEGS];
    for leg in 0..NUM_LEGS {
        let (_, vel) = contact_kinematics(state, leg, leg_velocities[leg], params);
        forces[leg] = friction_force(vel, loads[leg], psi[leg], state.theta, params);
    }
    forces
}

/// Diagnostics of one control step. Forces and leg velocities are averaged
/// over the physics substeps; `torque_sq` is the substep average of
/// [`torque_proxy`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    pub forces_world: [Vec2; NUM_LEGS],
    pub forces_body: [Vec2; NUM_LEGS],
    pub leg_velocities: [Vec2; NUM_LEGS],
    pub loads: [f64; NUM_LEGS],
    pub torque_sq: f64,
    /// Displacement the workspace projection removed from each leg's command.
    pub workspace_excess: [Vec2; NUM_LEGS],
}

/// Advances one control step.
pub fn step(
    state: &SimState,
    action: &Action,
    design: &DesignVector,
    params: &SimParams,
) -> Result<(SimState, StepInfo), SimError> {
    action.check_finite()?;
    let clamped = action.clamped();
    let (commanded, shares) = scale_action(&clamped, params);
    let loads = normal_loads(&shares, params);

    let commanded = commanded.map(|c| {
        let speed = norm(c);
        if speed > params.leg_speed_max {
            let k = params.leg_speed_max / speed;
            [c[0] * k, c[1] * k]
        } else {
            c
        }
    });

    let h = params.substep_dt();
    let inv_sub = 1.0 / params.substeps as f64;
    let p_max = params.leg_workspace_radius;
    let psi = design.angles();
    let hips = params.hips();

    let mut s = state.clone();
    let mut info = StepInfo { loads, ..StepInfo::default() };

    for _ in 0..params.substeps {
        let mut pdot = [[0.0; 2]; NUM_LEGS];
        let mut next_legs = s.legs;
        for leg in 0..NUM_LEGS {
            let p = s.legs[leg];
            let c = commanded[leg];
            let tentative = [p[0] + h * c[0], p[1] + h * c[1]];
            let r = norm(tentative);
            if r > p_max {
                let k = p_max / r;
                let projected = [tentative[0] * k, tentative[1] * k];
                info.workspace_excess[leg][0] += tentative[0] - projected[0];
                info.workspace_excess[leg][1] += tentative[1] - projected[1];
                pdot[leg] = [(projected[0] - p[0]) / h, (projected[1] - p[1]) / h];
                next_legs[leg] = projected;
            } else {
                pdot[leg] = c;
                next_legs[leg] = tentative;
            }
        }

        let mut force = [0.0; 2];
        let mut torque = 0.0;
        let mut forces_body = [[0.0; 2]; NUM_LEGS];
        for leg in 0..NUM_LEGS {
            let p = s.legs[leg];
            let r = rotate([hips[leg][0] + p[0], hips[leg][1] + p[1]], s.theta);
            let pd = rotate(pdot[leg], s.theta);
            let vel = [s.vx - s.omega * r[1] + pd[0], s.vy + s.omega * r[0] + pd[1]];
            let f = friction_force(vel, loads[leg], psi[leg], s.theta, params);
            force[0] += f[0];
            force[1] += f[1];
            torque += cross(r, f);
            forces_body[leg] = rotate(f, -s.theta);
            for k in 0..2 {
                info.forces_world[leg][k] += f[k] * inv_sub;
                info.forces_body[leg][k] += forces_body[leg][k] * inv_sub;
                info.leg_velocities[leg][k] += pdot[leg][k] * inv_sub;
            }
        }
        info.torque_sq += torque_proxy(&forces_body, &pdot, params) * inv_sub;

        s.vx += h * force[0] / params.mass;
        s.vy += h * force[1] / params.mass;
        s.omega += h * torque / params.yaw_inertia;
        s.x += h * s.vx;
        s.y += h * s.vy;
        s.theta += h * s.omega;
        s.legs = next_legs;
    }
    s.prev_action = clamped;
    Ok((s, info))
}

/// Uniform half-widths for sampling initial states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResetConfig {
    /// rad
    pub heading: f64,
    /// m/s, per world velocity component
    pub velocity: f64,
    /// rad/s
    pub yaw_rate: f64,
    /// m, per leg offset component; offsets are then pulled into the workspace disk
    pub leg_offset: f64,
}

impl Default for ResetConfig {
    fn default() -> Self {
        Self { heading: std::f64::consts::PI, velocity: 0.5, yaw_rate: 0.5, leg_offset: 0.05 }
    }
}

impl ResetConfig {
    /// Body at rest, heading zero, legs centered.
    pub fn canonical() -> Self {
        Self { heading: 0.0, velocity: 0.0, yaw_rate: 0.0, leg_offset: 0.0 }
    }
}

fn symmetric_uniform(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Initial state at the origin, deterministic per seed.
pub fn reset(seed: u64, config: &ResetConfig, params: &SimParams) -> SimState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reset_with_rng(&mut rng, config, params)
}

pub fn reset_with_rng(rng: &mut ChaCha8Rng, config: &ResetConfig, params: &SimParams) -> SimState {
    let theta = symmetric_uniform(rng, config.heading);
    let vx = symmetric_uniform(rng, config.velocity);
    let vy = symmetric_uniform(rng, config.velocity);
    let omega = symmetric_uniform(rng, config.yaw_rate);
    let mut legs = [[0.0; 2]; NUM_LEGS];
    for leg in legs.iter_mut() {
        let p = [symmetric_uniform(rng, config.leg_offset), symmetric_uniform(rng, config.leg_offset)];
        let r = norm(p);
        *leg = if r > params.leg_workspace_radius {
            let k = params.leg_workspace_radius / r;
            [p[0] * k, p[1] * k]
        } else {
            p
        };
    }
    SimState { theta, vx, vy, omega, legs, ..SimState::default() }
}

/// One line of a trajectory dump. Field order is the serialized order and is stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
    pub p: [Vec2; NUM_LEGS],
    pub f: [Vec2; NUM_LEGS],
    pub torque_sq: f64,
    pub cmd_vx: f64,
    pub cmd_vy: f64,
    pub cmd_wz: f64,
    pub frame: crate::rewards::CommandFrame,
}

/// Dump line for the state reached by a step taken under `command`.
pub fn trajectory_record(t: f64, state: &SimState, info: &StepInfo, command: &crate::rewards::Command) -> TrajectoryRecord {
    TrajectoryRecord {
        t,
        x: state.x,
        y: state.y,
        theta: state.theta,
        vx: state.vx,
        vy: state.vy,
        omega: state.omega,
        p: state.legs,
        f: info.forces_world,
        torque_sq: info.torque_sq,
        cmd_vx: command.linear[0],
        cmd_vy: command.linear[1],
        cmd_wz: command.yaw_rate,
        frame: command.frame,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6};

    fn assert_vec(a: Vec2, b: Vec2, tol: f64) {
        assert!((a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn wheel_axes_examples() {
        let (u, n) = wheel_axes(0.0, 0.0);
        assert_vec(u, [1.0, 0.0], 1e-15);
        assert_vec(n, [0.0, 1.0], 1e-15);
        let (u, n) = wheel_axes(FRAC_PI_2, 0.0);
        assert_vec(u, [0.0, 1.0], 1e-15);
        assert_vec(n, [-1.0, 0.0], 1e-15);
        let (u, n) = wheel_axes(FRAC_PI_6, FRAC_PI_3);
        assert_vec(u, [0.0, 1.0], 1e-15);
        assert_vec(n, [-1.0, 0.0], 1e-15);
        assert!((norm(u) - 1.0).abs() < 1e-12 && (norm(n) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contact_kinematics_examples() {
        let p = SimParams::default();
        let rest = SimState::default();
        for leg in 0..NUM_LEGS {
            assert_eq!(contact_kinematics(&rest, leg, [0.0, 0.0], &p).1, [0.0, 0.0]);
        }
        let spin = SimState { omega: 1.0, ..SimState::default() };
        let (pos, vel) = contact_kinematics(&spin, 1, [0.0, 0.0], &p);
        assert_vec(pos, [0.19, 0.14], 1e-15);
        assert_vec(vel, [-0.14, 0.19], 1e-15);
        let glide = SimState { vx: 1.0, theta: 0.7, ..SimState::default() };
        for leg in 0..NUM_LEGS {
            assert_vec(contact_kinematics(&glide, leg, [0.0, 0.0], &p).1, [1.0, 0.0], 1e-15);
        }
    }

    #[test]
    fn friction_examples() {
        let p = SimParams::default();
        assert_eq!(friction_force([0.0, 0.0], 30.0, 0.3, 0.2, &p), [0.0, 0.0]);

        let (_, n) = wheel_axes(0.3, 0.2);
        let f = friction_force(n, 30.0, 0.3, 0.2, &p);
        let expected = -0.8 * 30.0 * 20f64.tanh();
        assert_vec(f, [expected * n[0], expected * n[1]], 1e-12);
        assert!((norm(f) - 24.0).abs() < 1e-6);

        let load = p.weight() / 4.0;
        let f = friction_force([2.0, 0.0], load, 0.0, 0.0, &p);
        assert_vec(f, [-p.mu_roll * load * 40f64.tanh(), 0.0], 1e-15);
        assert!(4.0 * f[0].abs() <= p.mu_roll * p.weight());
        assert!((p.mu_roll * p.weight() - 2.3544).abs() < 1e-12);
    }

    #[test]
    fn friction_magnitude_bound() {
        let p = SimParams::default();
        let bound = 30.0 * (p.mu_roll.powi(2) + p.mu_lat.powi(2)).sqrt();
        for i in 0..200 {
            let a = i as f64 * 0.37;
            let v = [3.0 * a.cos(), 2.0 * (1.3 * a).sin()];
            assert!(norm(friction_force(v, 30.0, a.sin(), a, &p)) <= bound + 1e-12);
        }
    }

    #[test]
    fn torque_proxy_examples() {
        let p = SimParams::default();
        let zero = [[0.0; 2]; NUM_LEGS];
        assert_eq!(torque_proxy(&zero, &zero, &p), 0.0);
        let mut f = zero;
        f[2] = [10.0, 0.0];
        assert!((torque_proxy(&f, &zero, &p) - 6.25).abs() < 1e-12);
        let scaled = f.map(|v| [3.0 * v[0], 3.0 * v[1]]);
        assert!((torque_proxy(&scaled, &zero, &p) - 9.0 * 6.25).abs() < 1e-10);
    }

    #[test]
    fn rest_is_a_fixed_point() {
        let p = SimParams::default();
        let s = SimState::default();
        let (next, info) = step(&s, &Action::zero(), &DesignVector::new(0.1, -0.2, 0.3, 0.4), &p).unwrap();
        assert_eq!(next, s);
        assert_eq!(info.torque_sq, 0.0);
    }

    #[test]
    fn non_finite_action_is_named() {
        let p = SimParams::default();
        let mut a = Action::zero();
        a.0[5] = f64::NAN;
        let err = step(&SimState::default(), &a, &DesignVector::default(), &p).unwrap_err();
        assert!(matches!(err, SimError::NonFiniteAction { index: 5, name: "FL.stance", .. }));
        assert!(err.to_string().contains("FL.stance"));
    }

    #[test]
    fn coasting_decays_monotonically() {
        let p = SimParams::default();
        let mut s = SimState { vx: 1.0, ..SimState::default() };
        let mut last = s.speed();
        for _ in 0..400 {
            s = step(&s, &Action::zero(), &DesignVector::parallel(), &p).unwrap().0;
            assert!(s.speed() <= last);
            last = s.speed();
        }
        assert!(last < 1.0);
    }

    #[test]
    fn integrator_stability_margin() {
        let p = SimParams::default();
        assert!(p.substep_dt() * p.friction_stiffness_bound() <= 2.0);
    }

    #[test]
    fn reset_determinism_and_ranges() {
        let p = SimParams::default();
        assert_eq!(reset(7, &ResetConfig::canonical(), &p), SimState::default());
        let cfg = ResetConfig { heading: 1.0, velocity: 0.5, yaw_rate: 0.2, leg_offset: 0.2 };
        assert_eq!(reset(11, &cfg, &p), reset(11, &cfg, &p));
        assert_ne!(reset(11, &cfg, &p), reset(12, &cfg, &p));
        for seed in 0..10_000 {
            let s = reset(seed, &cfg, &p);
            assert!(s.vx.abs() <= 0.5 && s.vy.abs() <= 0.5);
            assert!(s.theta.abs() <= 1.0 && s.omega.abs() <= 0.2);
            assert!(s.legs.iter().all(|l| norm(*l) <= p.leg_workspace_radius + 1e-15));
        }
    }

    #[test]
    fn loads_sum_to_weight() {
        let p = SimParams::default();
        let loads = normal_loads(&[0.1, 0.9, 0.3, 0.02], &p);
        assert!((loads.iter().sum::<f64>() - p.weight()).abs() < 1e-12);
        let tiny = normal_loads(&[0.001; 4], &p);
        assert!(tiny.iter().sum::<f64>() < p.weight());
    }
}
