//! Behavior scenarios for trained controllers: steady tracking, the hockey
//! stop, self-alignment, and the directional cost-of-transport sweep.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::DesignVector;
use crate::error::{PolicyError, SimError};
use crate::policy::Controller;
use crate::rewards::{
    instantaneous_cot, linear_error, observe, twist, Command, CommandFrame, MetricWindow,
};
use crate::sim::{reset, step, trajectory_record, ResetConfig, SimParams, SimState, StepInfo, TrajectoryRecord};
use crate::train::{mix_seed, SkateVecEnv, VecEnv};

/// Steps a controller through the simulator and keeps the trajectory.
pub struct Runner<'a> {
    pub controller: &'a mut dyn Controller,
    pub design: DesignVector,
    pub sim: &'a SimParams,
    pub state: SimState,
    pub t: f64,
    pub records: Vec<TrajectoryRecord>,
}

impl<'a> Runner<'a> {
    pub fn new(controller: &'a mut dyn Controller, design: DesignVector, sim: &'a SimParams, state: SimState) -> Self {
        controller.reset();
        Self { controller, design, sim, state, t: 0.0, records: Vec::new() }
    }

    pub fn advance(&mut self, command: &Command) -> Result<StepInfo, SimError> {
        let obs = observe(&self.state, command, self.sim);
        let action = self.controller.act(&obs);
        let (next, info) = step(&self.state, &action, &self.design, self.sim)?;
        self.state = next;
        self.t += self.sim.dt;
        self.records.push(trajectory_record(self.t, &self.state, &info, command));
        Ok(info)
    }
}

fn steps_for(seconds: f64, dt: f64) -> usize {
    (seconds / dt).round() as usize
}

/// Mean twist over the last `average_s` seconds of a `duration_s` rollout
/// from rest under a fixed command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyTracking {
    /// Body-frame linear velocity for base-frame commands, world-frame otherwise.
    pub velocity: [f64; 2],
    pub yaw_rate: f64,
    pub mean_linear_error: f64,
}

pub fn steady_tracking(
    controller: &mut dyn Controller,
    design: &DesignVector,
    sim: &SimParams,
    command: &Command,
    initial: SimState,
    duration_s: f64,
    average_s: f64,
) -> Result<SteadyTracking, SimError> {
    let n = steps_for(duration_s, sim.dt);
    let k = steps_for(average_s, sim.dt).clamp(1, n.max(1));
    let mut runner = Runner::new(controller, *design, sim, initial);
    let mut acc = [0.0; 4];
    for i in 0..n {
        runner.advance(command)?;
        if i + k >= n {
            let tw = twist(&runner.state, command.frame);
            acc[0] += tw[0];
            acc[1] += tw[1];
            acc[2] += tw[2];
            acc[3] += linear_error(&runner.state, command);
        }
    }
    let inv = 1.0 / k as f64;
    Ok(SteadyTracking { velocity: [acc[0] * inv, acc[1] * inv], yaw_rate: acc[2] * inv, mean_linear_error: acc[3] * inv })
}

/// One trial of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Stop time in s or alignment angle in rad; absent for discarded trials.
    pub value: Option<f64>,
    pub flagged: bool,
    pub note: String,
    /// Time at which the measured phase starts, s.
    pub t_switch: f64,
    /// File holding the trial's time series, once written.
    pub series: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub frame: CommandFrame,
    pub trials: Vec<TrialResult>,
}

impl ScenarioResult {
    /// Median over trials that produced a value.
    pub fn median(&self) -> Option<f64> {
        median(&self.trials.iter().filter_map(|t| t.value).collect::<Vec<_>>())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HockeyStopConfig {
    /// m/s
    pub speed: f64,
    pub trials: usize,
    /// m/s; the body counts as stopped at or below this speed.
    pub stop_threshold: f64,
    /// s
    pub stop_timeout: f64,
    /// s allowed to reach steady tracking before the trial is discarded.
    pub steady_timeout: f64,
    /// m/s of linear error that counts as tracking.
    pub steady_tolerance: f64,
    /// s the tracking must hold before the stop command.
    pub steady_hold: f64,
    /// Start each trial already moving at `speed` along the heading and
    /// command the stop at once, skipping the drive phase.
    pub start_moving: bool,
}

impl Default for HockeyStopConfig {
    fn default() -> Self {
        Self {
            speed: 2.0,
            trials: 10,
            stop_threshold: 0.1,
            stop_timeout: 10.0,
            steady_timeout: 15.0,
            steady_tolerance: 0.3,
            steady_hold: 1.0,
            start_moving: false,
        }
    }
}

fn speed_of(r: &TrajectoryRecord) -> f64 {
    r.vx.hypot(r.vy)
}

/// Stop time recomputed from a trial's series: time from `t_switch` until the
/// first record at or after it whose speed is at or below `threshold`.
pub fn stop_time_from_series(series: &[TrajectoryRecord], t_switch: f64, threshold: f64) -> Option<f64> {
    series.iter().find(|r| r.t >= t_switch - 1e-12 && speed_of(r) <= threshold).map(|r| r.t - t_switch)
}

/// Heading the initial body faces, drawn from the trial seed.
fn trial_start(seed: u64, sim: &SimParams) -> SimState {
    let cfg = ResetConfig { heading: PI, ..ResetConfig::canonical() };
    reset(seed, &cfg, sim)
}

/// Drives at `speed` along the initial heading, then commands a stop and
/// times how long the body takes to come to rest.
pub fn hockey_stop(
    controller: &mut dyn Controller,
    design: &DesignVector,
    sim: &SimParams,
    frame: CommandFrame,
    config: &HockeyStopConfig,
    seed: u64,
) -> Result<(ScenarioResult, Vec<Vec<TrajectoryRecord>>), SimError> {
    let mut trials = Vec::new();
    let mut all_series = Vec::new();
    for k in 0..config.trials {
        let trial_seed = mix_seed(seed, k as u64);
        let mut start = trial_start(trial_seed, sim);
        let heading = start.theta;
        if config.start_moving {
            start.vx = config.speed * heading.cos();
            start.vy = config.speed * heading.sin();
        }
        let drive = match frame {
            CommandFrame::BaseFrame => Command::new([config.speed, 0.0], 0.0, frame),
            CommandFrame::WorldFrame => {
                Command::new([config.speed * heading.cos(), config.speed * heading.sin()], 0.0, frame)
            }
        };
        let stop = Command::stop(frame);
        let mut runner = Runner::new(controller, *design, sim, start);
        let mut note = String::new();
        let mut steady = config.speed <= 0.0 || config.start_moving;
        if !steady {
            let hold = steps_for(config.steady_hold, sim.dt).max(1);
            let mut held = 0;
            for _ in 0..steps_for(config.steady_timeout, sim.dt) {
                runner.advance(&drive)?;
                held = if linear_error(&runner.state, &drive) <= config.steady_tolerance { held + 1 } else { 0 };
                if held >= hold {
                    steady = true;
                    break;
                }
            }
        }
        let t_switch = runner.t;
        let mut value = None;
        let mut flagged = false;
        if !steady {
            flagged = true;
            note = "no steady tracking before the timeout".into();
        } else if runner.state.speed() <= config.stop_threshold {
            value = Some(0.0);
        } else {
            for _ in 0..steps_for(config.stop_timeout, sim.dt) {
                runner.advance(&stop)?;
                if runner.state.speed() <= config.stop_threshold {
                    value = Some(runner.t - t_switch);
                    break;
                }
            }
            if value.is_none() {
                flagged = true;
                note = "did not stop before the timeout".into();
                value = Some(config.stop_timeout);
            }
        }
        trials.push(TrialResult { trial: k, seed: trial_seed, value, flagged, note, t_switch, series: None });
        all_series.push(runner.records);
    }
    Ok((ScenarioResult { scenario: "hockey-stop".into(), frame, trials }, all_series))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfAlignConfig {
    pub trials: usize,
    /// m/s, world-frame command magnitude
    pub speed: f64,
    /// s before the angle is read
    pub settle: f64,
    /// Odd trials replay the previous trial mirrored left to right.
    pub mirror_pairs: bool,
    /// m/s of linear error above which a trial is flagged as not tracking.
    pub tracking_tolerance: f64,
}

impl Default for SelfAlignConfig {
    fn default() -> Self {
        Self { trials: 16, speed: 1.0, settle: 4.0, mirror_pairs: true, tracking_tolerance: 1.0 }
    }
}

/// Angle in `[0, pi]` between the body's backward axis and the direction of
/// the world-frame command.
pub fn alignment_angle(theta: f64, command: [f64; 2]) -> f64 {
    let back = [-theta.cos(), -theta.sin()];
    let n = command[0].hypot(command[1]);
    if n == 0.0 {
        return 0.0;
    }
    ((back[0] * command[0] + back[1] * command[1]) / n).clamp(-1.0, 1.0).acos()
}

/// Alignment angle recomputed from the last record of a trial's series.
pub fn alignment_from_series(series: &[TrajectoryRecord]) -> Option<f64> {
    series.last().map(|r| alignment_angle(r.theta, [r.cmd_vx, r.cmd_vy]))
}

/// Initial state and command of self-alignment trial `k`.
pub fn self_align_trial(seed: u64, k: usize, config: &SelfAlignConfig, sim: &SimParams) -> (u64, SimState, Command) {
    let base = if config.mirror_pairs && k % 2 == 1 { k - 1 } else { k };
    let trial_seed = mix_seed(seed, base as u64);
    let start = trial_start(trial_seed, sim);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(trial_seed, 0xA119));
    let beta: f64 = rng.gen_range(0.0..2.0 * PI);
    let command = Command::new([config.speed * beta.cos(), config.speed * beta.sin()], 0.0, CommandFrame::WorldFrame);
    if base != k {
        (trial_seed, start.mirrored(), command.mirrored())
    } else {
        (trial_seed, start, command)
    }
}

/// Runs world-frame commands in random directions and reads the angle between
/// the body's backward axis and the command after the settling window.
pub fn self_align(
    controller: &mut dyn Controller,
    design: &DesignVector,
    sim: &SimParams,
    config: &SelfAlignConfig,
    seed: u64,
) -> Result<(ScenarioResult, Vec<Vec<TrajectoryRecord>>), SimError> {
    let mut trials = Vec::new();
    let mut all_series = Vec::new();
    for k in 0..config.trials {
        let (trial_seed, start, command) = self_align_trial(seed, k, config, sim);
        let mut runner = Runner::new(controller, *design, sim, start);
        for _ in 0..steps_for(config.settle, sim.dt) {
            runner.advance(&command)?;
        }
        let angle = alignment_angle(runner.state.theta, command.linear);
        let err = linear_error(&runner.state, &command);
        let flagged = err > config.tracking_tolerance;
        let note = if flagged { format!("linear error {err:.3} m/s at readout") } else { String::new() };
        trials.push(TrialResult { trial: k, seed: trial_seed, value: Some(angle), flagged, note, t_switch: 0.0, series: None });
        all_series.push(runner.records);
    }
    Ok((ScenarioResult { scenario: "self-align".into(), frame: CommandFrame::WorldFrame, trials }, all_series))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// m/s
    pub speed: f64,
    pub n_angles: usize,
    /// s per direction
    pub duration: f64,
    /// s discarded at the start of each direction
    pub warmup: f64,
    /// m/s; sustained speeds above this abort the direction
    pub divergence_speed: f64,
    /// s the speed must stay above `divergence_speed`
    pub divergence_hold: f64,
    /// m/s floor in the cost-of-transport denominator
    pub v_floor: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            speed: 1.5,
            n_angles: 24,
            duration: 10.0,
            warmup: 4.0,
            divergence_speed: 10.0,
            divergence_hold: 0.5,
            v_floor: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha_deg: f64,
    pub cot: f64,
    pub failed: bool,
}

/// Mean steady-state cost of transport for body-frame commands of fixed
/// magnitude in `n_angles` evenly spaced directions, each from rest.
pub fn directional_cot_sweep(
    controller: &mut dyn Controller,
    design: &DesignVector,
    sim: &SimParams,
    config: &SweepConfig,
) -> Result<Vec<SweepRow>, SimError> {
    let n = steps_for(config.duration, sim.dt);
    let warm = steps_for(config.warmup, sim.dt).min(n.saturating_sub(1));
    let hold = steps_for(config.divergence_hold, sim.dt).max(1);
    let mut rows = Vec::with_capacity(config.n_angles);
    for k in 0..config.n_angles {
        let alpha = 2.0 * PI * k as f64 / config.n_angles as f64;
        let command = Command::new([config.speed * alpha.cos(), config.speed * alpha.sin()], 0.0, CommandFrame::BaseFrame);
        let mut runner = Runner::new(controller, *design, sim, SimState::default());
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut fast = 0usize;
        let mut failed = false;
        for i in 0..n {
            let info = runner.advance(&command)?;
            fast = if runner.state.speed() > config.divergence_speed || !runner.state.is_finite() { fast + 1 } else { 0 };
            if fast >= hold {
                failed = true;
                break;
            }
            if i >= warm {
                sum += instantaneous_cot(info.torque_sq, twist(&runner.state, CommandFrame::BaseFrame), sim, config.v_floor);
                count += 1;
            }
        }
        let cot = if failed || count == 0 { f64::NAN } else { sum / count as f64 };
        rows.push(SweepRow { alpha_deg: alpha.to_degrees(), cot, failed });
    }
    Ok(rows)
}

/// Plain-text polar table: header line, then `alpha_deg cot failed` rows.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha_deg\tcot\tfailed\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\n", r.alpha_deg, r.cot, u8::from(r.failed)));
    }
    out
}

/// A trajectory line tagged with the environment that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvRecord {
    pub env: usize,
    #[serde(flatten)]
    pub record: TrajectoryRecord,
}

/// Runs `controller` in every environment of `env` for `steps` steps, filling
/// a metric window of the last `window_steps` steps and returning the
/// trajectory of every step that entered it.
pub fn logged_metric_rollout(
    env: &mut SkateVecEnv,
    controller: &mut dyn Controller,
    steps: usize,
    window_steps: usize,
) -> Result<(MetricWindow, Vec<EnvRecord>), PolicyError> {
    let n_env = env.n_env();
    env.record = true;
    let mut window = MetricWindow::new(n_env, window_steps);
    let mut dump = Vec::new();
    controller.reset();
    for t in 0..steps {
        for e in 0..n_env {
            let obs = env.observe(e);
            let action = controller.act(&obs);
            let tr = env.step(e, &action)?;
            if let (Some(cell), Some(record)) = (tr.cell, tr.record) {
                window.push(e, cell);
                if t + window_steps >= steps {
                    dump.push(EnvRecord { env: e, record });
                }
            }
        }
    }
    env.record = false;
    Ok((window, dump))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{expand_design, CouplingMode};
    use crate::rewards::OBS_DIM;
    use crate::sim::{Action, ACTION_DIM, NUM_LEGS};

    struct Still;

    impl Controller for Still {
        fn act(&mut self, _obs: &[f64; OBS_DIM]) -> Action {
            Action::zero()
        }
    }

    /// Reference controller that turns the body toward the commanded direction
    /// with a diagonal stepping gait: one diagonal pair is loaded and sweeps
    /// its legs tangentially, the other recovers, then they swap.
    struct HeadingServo {
        hips: [[f64; 2]; NUM_LEGS],
        stroke: bool,
    }

    impl HeadingServo {
        fn new(sim: &SimParams) -> Self {
            Self { hips: sim.hips(), stroke: false }
        }
    }

    impl Controller for HeadingServo {
        fn act(&mut self, obs: &[f64; OBS_DIM]) -> Action {
            let phi = obs[4].atan2(obs[3]);
            let mut a = [0.0; ACTION_DIM];
            let sigma = if phi.abs() < 0.03 { 0.0 } else { phi.signum() };
            // The pair that leads depends on the turning direction so that the
            // gait is mirror-equivariant.
            let first = if sigma >= 0.0 { [0, 3] } else { [1, 2] };
            let loaded_pair = if self.stroke { [first[0] ^ 1, first[1] ^ 1] } else { first };
            let speed = 0.6 * (phi.abs() / 0.3).min(1.0);
            let mut reached = true;
            for leg in 0..NUM_LEGS {
                let h = self.hips[leg];
                let r = h[0].hypot(h[1]);
                let tan = [-h[1] / r, h[0] / r];
                let q = [obs[6 + 2 * leg], obs[7 + 2 * leg]];
                let c = q[0] * tan[0] + q[1] * tan[1];
                let radial = [q[0] - c * tan[0], q[1] - c * tan[1]];
                let loaded = loaded_pair.contains(&leg);
                let vt = if loaded { -sigma * speed } else { sigma * speed };
                if loaded && sigma != 0.0 && -sigma * c < 0.8 {
                    reached = false;
                }
                a[3 * leg] = (vt * tan[0] - 2.0 * radial[0]).clamp(-1.0, 1.0);
                a[3 * leg + 1] = (vt * tan[1] - 2.0 * radial[1]).clamp(-1.0, 1.0);
                a[3 * leg + 2] = if sigma == 0.0 { 0.0 } else if loaded { 1.0 } else { -1.0 };
            }
            if reached && sigma != 0.0 {
                self.stroke = !self.stroke;
            }
            Action(a)
        }

        fn reset(&mut self) {
            self.stroke = false;
        }
    }

    fn coupled(deg: f64) -> DesignVector {
        expand_design(&[deg.to_radians()], CouplingMode::Coupled1D).unwrap()
    }

    #[test]
    fn zero_speed_stops_immediately() {
        let sim = SimParams::default();
        let cfg = HockeyStopConfig { speed: 0.0, trials: 3, ..HockeyStopConfig::default() };
        let (res, series) = hockey_stop(&mut Still, &coupled(30.0), &sim, CommandFrame::BaseFrame, &cfg, 4).unwrap();
        assert!(res.trials.iter().all(|t| t.value == Some(0.0) && !t.flagged));
        for (t, s) in res.trials.iter().zip(&series) {
            assert!(s.is_empty());
            assert_eq!(t.t_switch, 0.0);
        }
    }

    #[test]
    fn unsteady_trials_are_discarded() {
        let sim = SimParams::default();
        let cfg = HockeyStopConfig { trials: 2, steady_timeout: 1.0, ..HockeyStopConfig::default() };
        let (res, _) = hockey_stop(&mut Still, &coupled(30.0), &sim, CommandFrame::WorldFrame, &cfg, 4).unwrap();
        assert!(res.trials.iter().all(|t| t.value.is_none() && t.flagged));
        assert_eq!(res.median(), None);
    }

    #[test]
    fn moving_start_brakes_on_angled_wheels() {
        let sim = SimParams::default();
        let cfg = HockeyStopConfig { trials: 2, start_moving: true, ..HockeyStopConfig::default() };
        let (res, series) = hockey_stop(&mut Still, &coupled(30.0), &sim, CommandFrame::BaseFrame, &cfg, 4).unwrap();
        for (t, s) in res.trials.iter().zip(&series) {
            assert_eq!(t.t_switch, 0.0);
            let stop = t.value.unwrap();
            assert!(stop > 0.0 && !t.flagged, "{t:?}");
            assert_eq!(stop_time_from_series(s, t.t_switch, cfg.stop_threshold), Some(stop));
        }
    }

    #[test]
    fn alignment_angle_examples() {
        assert!((alignment_angle(0.0, [1.0, 0.0]) - PI).abs() < 1e-15);
        assert!(alignment_angle(PI, [1.0, 0.0]).abs() < 1e-7);
        assert!((alignment_angle(0.0, [0.0, 2.0]) - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn heading_servo_aligns_forward_axis() {
        let sim = SimParams::default();
        let cfg = SelfAlignConfig { trials: 8, ..SelfAlignConfig::default() };
        let mut servo = HeadingServo::new(&sim);
        let (res, series) = self_align(&mut servo, &coupled(30.0), &sim, &cfg, 21).unwrap();
        let m = res.median().unwrap();
        assert!((m - PI).abs() < 0.15, "median {m}, trials {:?}", res.trials);
        for (t, s) in res.trials.iter().zip(&series) {
            assert_eq!(alignment_from_series(s), t.value);
        }
    }

    #[test]
    fn mirrored_trials_mirror_each_other() {
        let sim = SimParams::default();
        let cfg = SelfAlignConfig { trials: 6, ..SelfAlignConfig::default() };
        let mut servo = HeadingServo::new(&sim);
        let (res, series) = self_align(&mut servo, &coupled(30.0), &sim, &cfg, 5).unwrap();
        for pair in 0..3 {
            let (a, b) = (&series[2 * pair], &series[2 * pair + 1]);
            assert_eq!(a.len(), b.len());
            for (ra, rb) in a.iter().zip(b) {
                assert!((ra.x - rb.x).abs() < 1e-9 && (ra.y + rb.y).abs() < 1e-9);
                assert!((ra.theta + rb.theta).abs() < 1e-9 && (ra.omega + rb.omega).abs() < 1e-9);
            }
            let (va, vb) = (res.trials[2 * pair].value.unwrap(), res.trials[2 * pair + 1].value.unwrap());
            assert!((va - vb).abs() < 1e-9);
        }
    }

    #[test]
    fn stop_time_recomputes_from_series() {
        let mk = |t: f64, vx: f64| TrajectoryRecord {
            t,
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            vx,
            vy: 0.0,
            omega: 0.0,
            p: [[0.0; 2]; 4],
            f: [[0.0; 2]; 4],
            torque_sq: 0.0,
            cmd_vx: 0.0,
            cmd_vy: 0.0,
            cmd_wz: 0.0,
            frame: CommandFrame::BaseFrame,
        };
        let s = vec![mk(0.02, 0.05), mk(0.04, 1.0), mk(0.06, 0.5), mk(0.08, 0.09)];
        assert_eq!(stop_time_from_series(&s, 0.04, 0.1), Some(0.08 - 0.04));
        assert_eq!(stop_time_from_series(&s, 0.1, 0.1), None);
    }

    /// Pushes every leg along the commanded body-frame direction.
    struct Push;

    impl Controller for Push {
        fn act(&mut self, obs: &[f64; OBS_DIM]) -> Action {
            let mut a = [0.0; ACTION_DIM];
            for leg in 0..NUM_LEGS {
                a[3 * leg] = -0.5 * obs[3];
                a[3 * leg + 1] = -0.5 * obs[4];
                a[3 * leg + 2] = 0.3;
            }
            Action(a)
        }
    }

    #[test]
    fn sweep_shape_and_mirror_symmetry() {
        let sim = SimParams::default();
        let cfg = SweepConfig { duration: 2.0, warmup: 0.5, ..SweepConfig::default() };
        let rows = directional_cot_sweep(&mut Push, &coupled(30.0), &sim, &cfg).unwrap();
        assert_eq!(rows.len(), 24);
        for k in 1..24 {
            let (a, b) = (rows[k].cot, rows[24 - k].cot);
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{k}: {a} vs {b}");
        }
        let one = directional_cot_sweep(&mut Push, &coupled(30.0), &sim, &SweepConfig { n_angles: 1, ..cfg.clone() }).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].cot, rows[0].cot);
        assert_eq!(sweep_table(&one).lines().count(), 2);
    }
}
