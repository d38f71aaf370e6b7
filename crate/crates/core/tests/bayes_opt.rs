//! Surrogate and outer-loop checks against brute-force oracles.

use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use skate_core::acquisition::ei;
use skate_core::codesign::{load_log, run_codesign, BoConfig, FnEvaluator};
use skate_core::design::{CouplingMode, DesignVector};
use skate_core::error::CodesignError;
use skate_core::gp::{GpHyper, GpModel};

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn se_ard(x: &[f64], y: &[f64], ls: &[f64], sf2: f64) -> f64 {
    let r2: f64 = x.iter().zip(y).zip(ls).map(|((a, b), l)| ((a - b) / l).powi(2)).sum();
    sf2 * (-0.5 * r2).exp()
}

fn posterior_matches_dense_solve() -> f64 {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for dim in [1, 2, 4] {
        let n = 20;
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect();
        let y_raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..1.0)).collect();
        let ls: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.2..0.6)).collect();
        let (sf2, sn2) = (1.7, 1e-3);
        let model = GpModel::condition(x.clone(), &y_raw, GpHyper::new(&ls, sf2, sn2), 1e-4).unwrap();
        assert_eq!(model.jitter(), 0.0);

        let mean = y_raw.iter().sum::<f64>() / n as f64;
        let sd = (y_raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let y: Vec<f64> = y_raw.iter().map(|v| (v - mean) / sd).collect();
        let k: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| se_ard(&x[i], &x[j], &ls, sf2) + if i == j { sn2 } else { 0.0 }).collect())
            .collect();
        let alpha = dense_solve(k.clone(), y);

        for _ in 0..50 {
            let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.2..1.2)).collect();
            let ks: Vec<f64> = x.iter().map(|xi| se_ard(xi, &q, &ls, sf2)).collect();
            let m_ref: f64 = ks.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            let v = dense_solve(k.clone(), ks.clone());
            let var_ref = (sf2 - ks.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()).max(0.0);
            let (m, var) = model.posterior(&q);
            assert!((m - m_ref).abs() < 1e-8, "dim {dim}: mean {m} vs {m_ref}");
            assert!((var - var_ref).abs() < 1e-8, "dim {dim}: var {var} vs {var_ref}");
            worst = worst.max((m - m_ref).abs()).max((var - var_ref).abs());
        }
    }
    worst
}

fn expected_improvement_matches_monte_carlo() -> f64 {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (mu, sd, best) in [(0.0, 1.0, 0.0), (0.3, 0.5, 0.5), (-0.2, 0.4, -0.5), (1.0, 0.2, 1.1)] {
        let draws = 1_000_000;
        let mut total = 0.0;
        for _ in 0..draws {
            let z: f64 = StandardNormal.sample(&mut rng);
            total += (mu + sd * z - best).max(0.0);
        }
        let mc = total / draws as f64;
        let closed = ei(mu, sd * sd, best);
        assert!((closed - mc).abs() < 1e-3, "mu {mu} sd {sd}: {closed} vs {mc}");
        worst = worst.max((closed - mc).abs());
    }
    assert!((ei(0.0, 1.0, 0.0) - 0.398_94).abs() < 1e-5);
    worst
}

fn noisy_quadratic(design: &DesignVector, seed: u64) -> f64 {
    let psi = design.reduce(CouplingMode::Coupled1D)[0];
    let noise: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(seed));
    (psi - 0.3).powi(2) + 1e-3 * noise
}

fn synthetic_quadratic_is_located() -> f64 {
    let mut worst = 0.0f64;
    let cfg = BoConfig { budget: 20, ..BoConfig::default() };
    for seed in 0..5 {
        let out = run_codesign(&cfg, seed, &mut FnEvaluator(noisy_quadratic), None, false).unwrap();
        assert_eq!(out.records.len(), 20);
        let psi = out.best.design.reduced_radians()[0];
        assert!((psi - 0.3).abs() < 0.05, "seed {seed}: best psi {psi}");
        worst = worst.max((psi - 0.3).abs());
    }
    worst
}

#[test]
fn global_basin_wins_over_local_one() {
    // Shallow local minimum near -0.9 rad, deeper global one near 0.6 rad.
    let f = |d: &DesignVector, _seed: u64| {
        let psi = d.reduce(CouplingMode::Coupled1D)[0];
        1.0 - 0.6 * (-(psi + 0.9).powi(2) / 0.05).exp() - (-(psi - 0.6).powi(2) / 0.05).exp()
    };
    let cfg = BoConfig { budget: 20, ..BoConfig::default() };
    for seed in 0..3 {
        let out = run_codesign(&cfg, seed, &mut FnEvaluator(f), None, false).unwrap();
        let psi = out.best.design.reduced_radians()[0];
        assert!((psi - 0.6).abs() < 0.05, "seed {seed}: best psi {psi}");
    }
}

#[test]
fn larger_space_does_no_worse_on_a_nested_objective() {
    // Front and rear angles prefer different magnitudes; the coupled space can
    // only compromise.
    let f = |d: &DesignVector, _seed: u64| {
        let a = d.angles();
        (a[1] - 0.5).powi(2) + (a[2] - 0.2).powi(2)
    };
    let budget = 30;
    for seed in 0..3 {
        let one = BoConfig { budget, ..BoConfig::default() };
        let two = BoConfig { budget, mode: CouplingMode::Symmetric2D, ..BoConfig::default() };
        let best1 = run_codesign(&one, seed, &mut FnEvaluator(f), None, false).unwrap().best.j;
        let best2 = run_codesign(&two, seed, &mut FnEvaluator(f), None, false).unwrap().best.j;
        assert!(best2 <= best1 * 1.02, "seed {seed}: 2D {best2} vs 1D {best1}");
        for r in run_codesign(&two, seed, &mut FnEvaluator(f), None, false).unwrap().records {
            assert!(r.expanded.satisfies(CouplingMode::Symmetric2D, 0.0));
        }
    }
}

#[test]
fn truncated_log_resumes_to_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = BoConfig { budget: 12, ..BoConfig::default() };
    let full = dir.path().join("full").join("evals.jsonl");
    fs::create_dir_all(full.parent().unwrap()).unwrap();
    let reference = run_codesign(&cfg, 5, &mut FnEvaluator(noisy_quadratic), Some(&full), false).unwrap();
    let full_text = fs::read_to_string(&full).unwrap();
    assert_eq!(full_text.lines().count(), 12);

    for keep in [0, 3, 4, 7, 11, 12] {
        let sub = dir.path().join(format!("keep{keep}"));
        fs::create_dir_all(&sub).unwrap();
        let log = sub.join("evals.jsonl");
        let prefix: String = full_text.lines().take(keep).map(|l| format!("{l}\n")).collect();
        fs::write(&log, prefix).unwrap();
        let mut calls = 0;
        let mut counting = FnEvaluator(|d: &DesignVector, s: u64| {
            calls += 1;
            noisy_quadratic(d, s)
        });
        let resumed = run_codesign(&cfg, 5, &mut counting, Some(&log), true).unwrap();
        assert_eq!(calls, 12 - keep);
        assert_eq!(resumed.records, reference.records);
        assert_eq!(fs::read_to_string(&log).unwrap(), full_text);
    }

    // A write cut off mid-line is dropped and redone.
    let log = dir.path().join("partial.jsonl");
    let cut: String = full_text.lines().take(5).map(|l| format!("{l}\n")).collect::<String>() + &full_text.lines().nth(5).unwrap()[..40];
    fs::write(&log, cut).unwrap();
    let resumed = run_codesign(&cfg, 5, &mut FnEvaluator(noisy_quadratic), Some(&log), true).unwrap();
    assert_eq!(resumed.records, reference.records);
    assert_eq!(fs::read_to_string(&log).unwrap(), full_text);
}

#[test]
fn corrupt_or_foreign_logs_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = BoConfig { budget: 6, ..BoConfig::default() };
    let log = dir.path().join("evals.jsonl");
    run_codesign(&cfg, 1, &mut FnEvaluator(noisy_quadratic), Some(&log), false).unwrap();
    let text = fs::read_to_string(&log).unwrap();

    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"iteration\": 2, \"phase\": \"initial\"";
    fs::write(&log, lines.join("\n") + "\n").unwrap();
    match load_log(&log) {
        Err(CodesignError::CorruptLog { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let err = run_codesign(&cfg, 1, &mut FnEvaluator(noisy_quadratic), Some(&log), true).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");

    fs::write(&log, &text).unwrap();
    let err = run_codesign(&cfg, 2, &mut FnEvaluator(noisy_quadratic), Some(&log), true).unwrap_err();
    assert!(matches!(err, CodesignError::LogMismatch { iteration: 0, .. }), "{err}");
}

pub fn criterion_4() -> String {
    let posterior = posterior_matches_dense_solve();
    let ei = expected_improvement_matches_monte_carlo();
    let psi = synthetic_quadratic_is_located();
    format!("posterior vs dense solve {posterior:.1e}; EI vs Monte Carlo {ei:.1e}; worst |psi - 0.3| over 5 seeds {psi:.4}")
}

#[test]
fn criterion_4_gp_and_bo_oracles() {
    println!("{}", criterion_4());
}
