//! Physical and symmetry properties of the planar simulator.

use proptest::prelude::*;
use proptest::test_runner::TestRunner;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skate_core::design::DesignVector;
use skate_core::sim::{normal_loads, step, Action, SimParams, SimState, ACTION_DIM, NUM_LEGS};

fn leg_offsets(raw: [[f64; 2]; NUM_LEGS], radius: f64) -> [[f64; 2]; NUM_LEGS] {
    raw.map(|p| {
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        if r > radius {
            [p[0] * radius / r, p[1] * radius / r]
        } else {
            p
        }
    })
}

fn state_strategy() -> impl Strategy<Value = SimState> {
    let radius = SimParams::default().leg_workspace_radius;
    (
        (-5.0..5.0f64, -5.0..5.0f64, -10.0..10.0f64),
        (-3.0..3.0f64, -3.0..3.0f64, -4.0..4.0f64),
        prop::array::uniform4(prop::array::uniform2(-0.2..0.2f64)),
        prop::array::uniform12(-1.0..1.0f64),
    )
        .prop_map(move |((x, y, theta), (vx, vy, omega), legs, prev_action)| SimState {
            x,
            y,
            theta,
            vx,
            vy,
            omega,
            legs: leg_offsets(legs, radius),
            prev_action,
        })
}

fn design_strategy() -> impl Strategy<Value = DesignVector> {
    prop::array::uniform4(-1.5..1.5f64).prop_map(DesignVector::from_angles)
}

fn max_state_gap(a: &SimState, b: &SimState) -> f64 {
    let mut gap = [a.x - b.x, a.y - b.y, a.theta - b.theta, a.vx - b.vx, a.vy - b.vy, a.omega - b.omega]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for (p, q) in a.legs.iter().zip(&b.legs) {
        gap = gap.max((p[0] - q[0]).abs()).max((p[1] - q[1]).abs());
    }
    gap
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() })
}

/// Zero commanded leg velocity, arbitrary stance logits: friction only
/// removes kinetic energy.
fn passivity_under_zero_leg_motion() {
    let params = SimParams::default();
    let strategy = (state_strategy(), design_strategy(), prop::array::uniform4(-3.0..3.0f64));
    runner(10_000)
        .run(&strategy, |(state, design, stance)| {
            let mut action = Action::zero();
            for leg in 0..NUM_LEGS {
                action.0[3 * leg + 2] = stance[leg];
            }
            let (next, _) = step(&state, &action, &design, &params).unwrap();
            let before = state.kinetic_energy(&params);
            let after = next.kinetic_energy(&params);
            prop_assert!(after <= before + 1e-9, "{before} -> {after}");
            Ok(())
        })
        .unwrap();
}

fn step_commutes_with_sagittal_reflection() {
    let params = SimParams::default();
    let strategy = (state_strategy(), design_strategy(), prop::array::uniform12(-1.5..1.5f64));
    runner(1_000)
        .run(&strategy, |(state, design, raw)| {
            let action = Action(raw);
            let (next, _) = step(&state, &action, &design, &params).unwrap();
            let (next_m, _) = step(&state.mirrored(), &action.mirrored(), &design.mirrored(), &params).unwrap();
            let gap = max_state_gap(&next.mirrored(), &next_m);
            prop_assert!(gap <= 1e-9, "gap {gap}");
            Ok(())
        })
        .unwrap();
}

fn loads_sum_to_weight_above_the_floor() {
    let params = SimParams::default();
    let weight = params.mass * params.gravity;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10_000 {
        let shares: [f64; NUM_LEGS] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        if shares.iter().sum::<f64>() < params.stance_floor {
            continue;
        }
        let total: f64 = normal_loads(&shares, &params).iter().sum();
        assert!((total - weight).abs() <= 4.0 * f64::EPSILON * weight, "{total}");
    }
    // Every realizable stance command keeps the shares above the floor.
    let (_, shares) = skate_core::sim::scale_action(&[-1.0; ACTION_DIM], &params);
    assert!(shares.iter().sum::<f64>() >= params.stance_floor);
}

fn parallel_wheels_cannot_push_forward() -> (f64, f64) {
    let params = SimParams::default();
    let bound = params.mu_roll * params.mass * params.gravity;
    let design = DesignVector::parallel();
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let mut state = SimState::default();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let action = Action(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        let (next, info) = step(&state, &action, &design, &params).unwrap();
        let fx: f64 = info.forces_body.iter().map(|f| f[0]).sum();
        worst = worst.max(fx.abs());
        state = next;
    }
    assert!(worst <= bound * (1.0 + 1e-12), "{worst} > {bound}");
    (worst, bound)
}

pub fn criterion_3() -> String {
    passivity_under_zero_leg_motion();
    step_commutes_with_sagittal_reflection();
    loads_sum_to_weight_above_the_floor();
    let (worst, bound) = parallel_wheels_cannot_push_forward();
    format!("passivity and mirror cases hold; largest net body-x force {worst:.4} N, bound {bound:.4} N")
}

#[test]
fn criterion_3_simulator_properties() {
    println!("{}", criterion_3());
}
