//! Acquisition functions, the phased schedule, and acquisition maximization
//! over the unit cube.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::gp::{halton, GpModel};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn ucb(mean: f64, variance: f64, beta: f64) -> f64 {
    mean + beta * variance.max(0.0).sqrt()
}

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement over `best` for a maximization problem.
pub fn ei(mean: f64, variance: f64, best: f64) -> f64 {
    let sd = variance.max(0.0).sqrt();
    let gap = mean - best;
    if sd == 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Initial,
    Ucb,
    UcbAnneal,
    Ei,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Initial => "initial",
            Phase::Ucb => "ucb",
            Phase::UcbAnneal => "ucb-anneal",
            Phase::Ei => "ei",
        }
    }
}

/// Acquisition to use at one BO step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Acquisition {
    Ucb { beta: f64 },
    Ei,
}

/// Fixed-beta UCB for steps `[0, boundaries[0])`, linearly annealed UCB for
/// `[boundaries[0], boundaries[1])`, EI afterwards. Steps count BO proposals
/// after the initial design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSchedule {
    pub boundaries: [usize; 2],
    pub beta_start: f64,
    pub beta_end: f64,
}

impl AcquisitionSchedule {
    /// Boundaries at the given fractions of `steps` BO proposals.
    pub fn from_fractions(steps: usize, ucb_fraction: f64, anneal_fraction: f64, beta_start: f64, beta_end: f64) -> Self {
        let b1 = (ucb_fraction * steps as f64).round() as usize;
        let b2 = ((ucb_fraction + anneal_fraction) * steps as f64).round() as usize;
        Self { boundaries: [b1, b2.max(b1 + 1)], beta_start, beta_end }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.boundaries[0] >= self.boundaries[1] {
            return Err("phase boundaries must be strictly increasing".into());
        }
        if !(self.beta_start >= self.beta_end && self.beta_end > 0.0) {
            return Err("need beta_start >= beta_end > 0".into());
        }
        Ok(())
    }

    pub fn phase(&self, step: usize) -> Phase {
        if step < self.boundaries[0] {
            Phase::Ucb
        } else if step < self.boundaries[1] {
            Phase::UcbAnneal
        } else {
            Phase::Ei
        }
    }

    pub fn acquisition(&self, step: usize) -> Acquisition {
        match self.phase(step) {
            Phase::Ucb | Phase::Initial => Acquisition::Ucb { beta: self.beta_start },
            Phase::UcbAnneal => {
                let [b1, b2] = self.boundaries;
                let t = (step - b1) as f64 / (b2 - b1) as f64;
                Acquisition::Ucb { beta: self.beta_start + t * (self.beta_end - self.beta_start) }
            }
            Phase::Ei => Acquisition::Ei,
        }
    }
}

/// Index of the first maximum; NaN entries never win.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

pub const GRID_1D: usize = 1001;
pub const GRID_2D: usize = 101;
pub const PROBES_4D: usize = 4096;

/// Candidate points searched for a `dim`-dimensional cube, in index order.
pub fn candidate_points(dim: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => (0..GRID_1D).map(|i| vec![i as f64 / (GRID_1D - 1) as f64]).collect(),
        2 => {
            let s = (GRID_2D - 1) as f64;
            (0..GRID_2D * GRID_2D).map(|k| vec![(k / GRID_2D) as f64 / s, (k % GRID_2D) as f64 / s]).collect()
        }
        _ => (1..=PROBES_4D as u64).map(|i| halton(i, dim)).collect(),
    }
}

/// Maximizes `acq` over the unit cube: exhaustive grid for 1 and 2 dimensions,
/// quasi-random probes plus coordinate ascent otherwise.
pub fn maximize<F: Fn(&[f64]) -> f64>(dim: usize, acq: F) -> Vec<f64> {
    let cands = candidate_points(dim);
    let values: Vec<f64> = cands.iter().map(|c| acq(c)).collect();
    let i = argmax_first(&values).unwrap_or(0);
    let mut x = cands[i].clone();
    if dim <= 2 {
        return x;
    }
    let mut fx = values[i];
    let mut h = 0.05;
    while h >= 1e-3 {
        let mut improved = false;
        for j in 0..dim {
            for dir in [-1.0, 1.0] {
                let mut y = x.clone();
                y[j] = (y[j] + dir * h).clamp(0.0, 1.0);
                let fy = acq(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    x
}

/// Next design in the unit cube for BO step `step`.
pub fn propose_next(model: &GpModel, schedule: &AcquisitionSchedule, step: usize) -> Vec<f64> {
    let best = model.best_target();
    match schedule.acquisition(step) {
        Acquisition::Ucb { beta } => maximize(model.dim(), |q| {
            let (m, v) = model.posterior(q);
            ucb(m, v, beta)
        }),
        Acquisition::Ei => maximize(model.dim(), |q| {
            let (m, v) = model.posterior(q);
            ei(m, v, best)
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::GpHyper;

    #[test]
    fn closed_form_examples() {
        assert_eq!(ucb(0.7, 4.0, 0.0), 0.7);
        assert_eq!(ucb(0.7, 4.0, 1.5), 3.7);
        assert_eq!(ei(-0.2, 0.0, 0.1), 0.0);
        assert_eq!(ei(0.3, 0.0, 0.1), 0.3 - 0.1);
        assert!((ei(0.5, 1.0, 0.5) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        let c = normal_cdf(1.959_963_984_540_054);
        assert!((c - 0.975).abs() < 1e-10, "{c:e}");
    }

    #[test]
    fn ei_nonnegative_and_monotone_in_sigma() {
        for mi in -20..=20 {
            let mu = mi as f64 * 0.15;
            let mut prev = 0.0;
            for si in 0..=50 {
                let sd = si as f64 * 0.05;
                let v = ei(mu, sd * sd, 0.0);
                assert!(v >= 0.0);
                assert!(v >= prev - 1e-15, "mu {mu} sd {sd}");
                prev = v;
            }
        }
        assert!(ei(-0.1, 1e-20, 0.0) < 1e-12);
    }

    #[test]
    fn schedule_phases_and_annealing() {
        let s = AcquisitionSchedule::from_fractions(10, 0.4, 0.4, 4.0, 1.0);
        assert_eq!(s.boundaries, [4, 8]);
        assert_eq!(s.phase(0), Phase::Ucb);
        assert_eq!(s.phase(4), Phase::UcbAnneal);
        assert_eq!(s.phase(8), Phase::Ei);
        assert_eq!(s.acquisition(1), Acquisition::Ucb { beta: 4.0 });
        assert_eq!(s.acquisition(6), Acquisition::Ucb { beta: 2.5 });
        assert_eq!(s.acquisition(9), Acquisition::Ei);
        assert!(s.validate().is_ok());
        let bad = AcquisitionSchedule { boundaries: [3, 3], beta_start: 4.0, beta_end: 1.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax_first(&[0.0, 2.0, 1.0, 2.0]), Some(1));
        assert_eq!(argmax_first(&[f64::NAN, 1.0]), Some(1));
        let x = maximize(1, |q| if (q[0] - 0.2).abs() < 1e-9 || (q[0] - 0.7).abs() < 1e-9 { 1.0 } else { 0.0 });
        assert_eq!(x, vec![0.2]);
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(candidate_points(1).len(), 1001);
        assert_eq!(candidate_points(2).len(), 101 * 101);
        assert_eq!(candidate_points(4).len(), 4096);
    }

    #[test]
    fn ei_picks_symmetric_interior_optimum() {
        // Two equal observations straddling 0.37 and one far, low point: the
        // posterior is mirror-symmetric about 0.37 up to a ~1e-7 tail.
        let x = vec![vec![0.32], vec![0.42], vec![0.98]];
        let m = GpModel::condition(x, &[1.0, 1.0, 0.0], GpHyper::new(&[0.05], 1.0, 1e-6), 1e-4).unwrap();
        let s = AcquisitionSchedule { boundaries: [0, 1], beta_start: 1.0, beta_end: 1.0 };
        let p = propose_next(&m, &s, 5);
        assert!((p[0] - 0.37).abs() < 0.5e-3 + 1e-12, "{p:?}");
    }

    #[test]
    fn coordinate_ascent_refines_4d() {
        let target = [0.31, 0.62, 0.17, 0.88];
        let x = maximize(4, |q| -q.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        for j in 0..4 {
            assert!((x[j] - target[j]).abs() < 2e-3, "{x:?}");
        }
    }
}
