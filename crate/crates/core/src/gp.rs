//! Gaussian-process surrogate with a squared-exponential ARD kernel.
//!
//! Targets are standardized before fitting; posterior queries return
//! standardized units.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::GpError;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical-inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// Point `index` of the Halton sequence in `[0,1)^dim`, `dim <= 8`.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton sequence supports up to {} dimensions", PRIMES.len());
    PRIMES[..dim].iter().map(|&b| radical_inverse(index, b)).collect()
}

/// Kernel and noise hyperparameters, all stored as natural logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_var: f64,
    pub log_noise_var: f64,
}

impl GpHyper {
    pub fn new(lengthscales: &[f64], signal_var: f64, noise_var: f64) -> Self {
        Self {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_signal_var: signal_var.ln(),
            log_noise_var: noise_var.ln(),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.push(self.log_signal_var);
        v.push(self.log_noise_var);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self { log_lengthscales: v[..d].to_vec(), log_signal_var: v[d], log_noise_var: v[d + 1] }
    }

    pub fn signal_var(&self) -> f64 {
        self.log_signal_var.exp()
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise_var.exp()
    }
}

/// `sigma_f^2 exp(-1/2 sum_j (x_j - y_j)^2 / l_j^2)`.
pub fn kernel(x: &[f64], y: &[f64], hyper: &GpHyper) -> f64 {
    let mut s = 0.0;
    for j in 0..x.len() {
        let d = (x[j] - y[j]) * (-hyper.log_lengthscales[j]).exp();
        s += d * d;
    }
    hyper.signal_var() * (-0.5 * s).exp()
}

/// Hyperparameter search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub lengthscale_bounds: [f64; 2],
    pub signal_var_bounds: [f64; 2],
    pub noise_var_bounds: [f64; 2],
    pub max_jitter: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iters: 300,
            lengthscale_bounds: [0.01, 10.0],
            signal_var_bounds: [0.01, 100.0],
            noise_var_bounds: [1e-6, 1.0],
            max_jitter: 1e-4,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, b) in [
            ("lengthscale_bounds", self.lengthscale_bounds),
            ("signal_var_bounds", self.signal_var_bounds),
            ("noise_var_bounds", self.noise_var_bounds),
        ] {
            if !(b[0] > 0.0 && b[0] <= b[1]) {
                return Err(format!("{name} must satisfy 0 < lo <= hi"));
            }
        }
        if self.noise_var_bounds[0] < 1e-6 {
            return Err("noise variance floor is 1e-6".into());
        }
        if self.restarts == 0 {
            return Err("restarts must be >= 1".into());
        }
        Ok(())
    }

    /// Box on the log-hyperparameter vector for a `dim`-dimensional input.
    fn log_bounds(&self, dim: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![self.lengthscale_bounds[0].ln(); dim];
        let mut hi = vec![self.lengthscale_bounds[1].ln(); dim];
        lo.push(self.signal_var_bounds[0].ln());
        hi.push(self.signal_var_bounds[1].ln());
        lo.push(self.noise_var_bounds[0].ln());
        hi.push(self.noise_var_bounds[1].ln());
        (lo, hi)
    }
}

fn covariance(x: &[Vec<f64>], hyper: &GpHyper) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], hyper))
}

/// Cholesky of `K + (noise + jitter) I`, escalating jitter from zero up to `max_jitter`.
fn factor(x: &[Vec<f64>], hyper: &GpHyper, max_jitter: f64) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let k = covariance(x, hyper);
    let noise = hyper.noise_var();
    let mut jitter = 0.0;
    loop {
        let mut m = k.clone();
        for i in 0..x.len() {
            m[(i, i)] += noise + jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > max_jitter * (1.0 + 1e-12) {
            return Err(GpError::NotPositiveDefinite { jitter: max_jitter });
        }
    }
}

/// Log marginal likelihood of `y` under `hyper` and its gradient with respect
/// to the log-hyperparameters (lengthscales, signal variance, noise variance).
pub fn log_marginal_likelihood(
    x: &[Vec<f64>],
    y: &[f64],
    hyper: &GpHyper,
    max_jitter: f64,
) -> Result<(f64, Vec<f64>), GpError> {
    let n = x.len();
    let d = hyper.dim();
    let (chol, jitter) = factor(x, hyper, max_jitter)?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let l = chol.l();
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;

    // W = alpha alpha^T - K^-1; dL/dtheta = 1/2 tr(W dK/dtheta)
    let mut w = &alpha * alpha.transpose();
    w -= chol.inverse();
    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..n {
            let kse = kernel(&x[i], &x[j], hyper);
            let wij = w[(i, j)];
            for (k, g) in grad.iter_mut().enumerate().take(d) {
                let diff = x[i][k] - x[j][k];
                *g += 0.5 * wij * kse * diff * diff * (-2.0 * hyper.log_lengthscales[k]).exp();
            }
            grad[d] += 0.5 * wij * kse;
        }
        grad[d + 1] += 0.5 * w[(i, i)] * (hyper.noise_var() + jitter);
    }
    Ok((lml, grad))
}

fn project(v: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..v.len() {
        v[i] = v[i].clamp(lo[i], hi[i]);
    }
}

/// Projected gradient ascent from one start, with Barzilai-Borwein steps
/// and backtracking. Returns the final point and its likelihood.
fn ascend(
    x: &[Vec<f64>],
    y: &[f64],
    start: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    config: &GpConfig,
) -> Option<(Vec<f64>, f64)> {
    let eval = |p: &[f64]| log_marginal_likelihood(x, y, &GpHyper::from_vec(p), config.max_jitter).ok();
    let mut p = start;
    project(&mut p, lo, hi);
    let (mut f, mut g) = eval(&p)?;
    let mut step = 0.1;
    for _ in 0..config.max_iters {
        let mut accepted = None;
        let mut s = step;
        for _ in 0..40 {
            let mut q: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a + s * b).collect();
            project(&mut q, lo, hi);
            let moved: f64 = q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
            if moved == 0.0 {
                break;
            }
            if let Some((fq, gq)) = eval(&q) {
                if fq >= f + 1e-4 * moved / s {
                    accepted = Some((q, fq, gq));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((q, fq, gq)) = accepted else { break };
        let dp: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = gq.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = dp.iter().zip(&dg).map(|(a, b)| a * b).sum();
        let ss: f64 = dp.iter().map(|a| a * a).sum();
        // Ascent: curvature is negative along the step when sy < 0.
        step = if sy < 0.0 { (ss / -sy).clamp(1e-6, 1e3) } else { (s * 2.0).min(1e3) };
        let improvement = fq - f;
        p = q;
        f = fq;
        g = gq;
        if improvement.abs() < 1e-12 && ss < 1e-20 {
            break;
        }
    }
    Some((p, f))
}

/// Maximizes the log marginal likelihood over the configured box from a fixed
/// set of Halton starts. Ties keep the earliest start.
pub fn fit_hyperparameters(x: &[Vec<f64>], y: &[f64], config: &GpConfig) -> Result<GpHyper, GpError> {
    fit_hyperparameters_with_starts(x, y, config, config.restarts)
}

pub fn fit_hyperparameters_with_starts(
    x: &[Vec<f64>],
    y: &[f64],
    config: &GpConfig,
    starts: usize,
) -> Result<GpHyper, GpError> {
    if x.len() < 2 {
        return Err(GpError::TooFewPoints { needed: 2, have: x.len() });
    }
    let dim = x[0].len();
    let (lo, hi) = config.log_bounds(dim);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in 0..starts {
        let u = halton(s as u64 + 1, dim + 2);
        let start: Vec<f64> = (0..dim + 2).map(|i| lo[i] + u[i] * (hi[i] - lo[i])).collect();
        if let Some((p, f)) = ascend(x, y, start, &lo, &hi, config) {
            if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
                best = Some((p, f));
            }
        }
    }
    best.map(|(p, _)| GpHyper::from_vec(&p)).ok_or(GpError::NotPositiveDefinite { jitter: config.max_jitter })
}

/// A conditioned GP over standardized targets.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Mean and scale used to standardize `y`; a constant vector gets scale 1.
pub fn standardization(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

impl GpModel {
    /// Conditions on raw targets `y` with fixed hyperparameters.
    pub fn condition(x: Vec<Vec<f64>>, y_raw: &[f64], hyper: GpHyper, max_jitter: f64) -> Result<Self, GpError> {
        if x.len() < 2 {
            return Err(GpError::TooFewPoints { needed: 2, have: x.len() });
        }
        if y_raw.len() != x.len() {
            return Err(GpError::Dimension { expected: x.len(), got: y_raw.len() });
        }
        let dim = hyper.dim();
        if let Some(bad) = x.iter().find(|p| p.len() != dim) {
            return Err(GpError::Dimension { expected: dim, got: bad.len() });
        }
        let (y_mean, y_scale) = standardization(y_raw);
        let y: Vec<f64> = y_raw.iter().map(|v| (v - y_mean) / y_scale).collect();
        let (chol, jitter) = factor(&x, &hyper, max_jitter)?;
        let alpha = chol.solve(&DVector::from_column_slice(&y));
        Ok(Self { x, y, y_mean, y_scale, hyper, chol, alpha, jitter })
    }

    /// Fits hyperparameters and conditions. On a failed fit `fallback` is used
    /// when given.
    pub fn fit(
        x: Vec<Vec<f64>>,
        y_raw: &[f64],
        config: &GpConfig,
        fallback: Option<&GpHyper>,
    ) -> Result<Self, GpError> {
        if x.len() < 2 {
            return Err(GpError::TooFewPoints { needed: 2, have: x.len() });
        }
        let (m, s) = standardization(y_raw);
        let y: Vec<f64> = y_raw.iter().map(|v| (v - m) / s).collect();
        match fit_hyperparameters(&x, &y, config) {
            Ok(h) => Self::condition(x, y_raw, h, config.max_jitter),
            Err(e) => match fallback {
                Some(h) => Self::condition(x, y_raw, h.clone(), config.max_jitter),
                None => Err(e),
            },
        }
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Standardized training targets.
    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn best_target(&self) -> f64 {
        self.y.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_standardized(&self, raw: f64) -> f64 {
        (raw - self.y_mean) / self.y_scale
    }

    pub fn from_standardized(&self, z: f64) -> f64 {
        z * self.y_scale + self.y_mean
    }

    /// Latent posterior mean and variance at `q`, standardized units.
    pub fn posterior(&self, q: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(xi, q, &self.hyper)));
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("cholesky factor has a positive diagonal");
        let var = (self.hyper.signal_var() - v.dot(&v)).max(0.0);
        (mean, var)
    }
}
