//! Small dense networks with hand-written backprop.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row-major, `out x in`) followed by the bias. Hidden layers use `tanh`,
//! the last layer is linear.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::PolicyError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations of every layer from the latest [`Mlp::forward`], input first.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// All-zero network with the given layer widths, input first.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs an input and an output width");
        Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)] }
    }

    /// Gaussian init scaled by `1/sqrt(fan_in)`, zero biases. The output layer
    /// is further scaled by `output_gain`.
    pub fn init<R: Rng>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(sizes);
        let n_layers = mlp.num_layers();
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == n_layers { output_gain } else { 1.0 };
            let std = gain / (fan_in as f64).sqrt();
            for w in &mut mlp.params[offset..offset + fan_in * fan_out] {
                let z: f64 = rng.sample(StandardNormal);
                *w = std * z;
            }
            offset += fan_in * fan_out + fan_out;
        }
        mlp
    }

    /// Rebuilds a network from stored widths and parameters.
    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self, PolicyError> {
        if sizes.len() < 2 {
            return Err(PolicyError::Malformed("network needs at least two layer widths".into()));
        }
        let expected = param_count(&sizes);
        if params.len() != expected {
            return Err(PolicyError::Dimension { expected, got: params.len() });
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Bias slice of the output layer.
    pub fn output_bias(&self) -> &[f64] {
        let out = self.output_dim();
        &self.params[self.params.len() - out..]
    }

    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let out = self.output_dim();
        let n = self.params.len();
        &mut self.params[n - out..]
    }

    fn check_input(&self, x: &[f64]) -> Result<(), PolicyError> {
        if x.len() != self.input_dim() {
            return Err(PolicyError::Dimension { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Forward pass that records activations for [`Mlp::backward`].
    pub fn forward<'c>(&self, x: &[f64], cache: &'c mut MlpCache) -> Result<&'c [f64], PolicyError> {
        self.check_input(x)?;
        let n_layers = self.num_layers();
        cache.acts.resize(n_layers + 1, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            out.clear();
            out.resize(n_out, 0.0);
            dense(&self.params[offset..offset + n_in * n_out + n_out], n_in, n_out, input, out);
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            offset += n_in * n_out + n_out;
        }
        Ok(cache.output())
    }

    /// Forward pass without a cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let mut cache = MlpCache::default();
        Ok(self.forward(x, &mut cache)?.to_vec())
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`
    /// for the input last passed through `forward` with `cache`.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) -> Result<(), PolicyError> {
        if d_out.len() != self.output_dim() {
            return Err(PolicyError::Dimension { expected: self.output_dim(), got: d_out.len() });
        }
        if grad.len() != self.params.len() {
            return Err(PolicyError::Dimension { expected: self.params.len(), got: grad.len() });
        }
        if cache.acts.len() != self.sizes.len() {
            return Err(PolicyError::Length { what: "forward cache does not match network depth".into() });
        }
        let n_layers = self.num_layers();
        let mut delta = d_out.to_vec();
        let mut offset = self.params.len();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            let input = &cache.acts[l];
            let w = &self.params[offset..offset + n_in * n_out];
            let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += wv * d;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        Ok(())
    }
}

/// Activations of every layer for a batch, each stored `batch x width` row-major.
#[derive(Debug, Clone, Default)]
pub struct BatchCache {
    batch: usize,
    acts: Vec<Vec<f64>>,
}

impl BatchCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// `c = alpha * a * b + beta * c` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every caller passes slices holding the full m x k, k x n and
    // m x n extents under the given strides.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc);
    }
}

impl Mlp {
    /// Forward pass over `batch` inputs stored row-major in `x`.
    pub fn forward_batch<'c>(&self, x: &[f64], batch: usize, cache: &'c mut BatchCache) -> Result<&'c [f64], PolicyError> {
        if x.len() != batch * self.input_dim() {
            return Err(PolicyError::Dimension { expected: batch * self.input_dim(), got: x.len() });
        }
        let n_layers = self.num_layers();
        cache.batch = batch;
        cache.acts.resize(n_layers + 1, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            out.clear();
            for _ in 0..batch {
                out.extend_from_slice(bias);
            }
            let (ni, no) = (n_in as isize, n_out as isize);
            gemm(batch, n_in, n_out, input, (ni, 1), w, (1, ni), 1.0, out, (no, 1));
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            offset += n_in * n_out + n_out;
        }
        Ok(cache.output())
    }

    /// Batched [`Mlp::backward`]: accumulates the gradient summed over the batch.
    pub fn backward_batch(&self, cache: &BatchCache, d_out: &[f64], grad: &mut [f64]) -> Result<(), PolicyError> {
        let batch = cache.batch;
        if d_out.len() != batch * self.output_dim() {
            return Err(PolicyError::Dimension { expected: batch * self.output_dim(), got: d_out.len() });
        }
        if grad.len() != self.params.len() {
            return Err(PolicyError::Dimension { expected: self.params.len(), got: grad.len() });
        }
        if cache.acts.len() != self.sizes.len() {
            return Err(PolicyError::Length { what: "forward cache does not match network depth".into() });
        }
        let mut delta = d_out.to_vec();
        let mut offset = self.params.len();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (ni, no) = (n_in as isize, n_out as isize);
            offset -= n_in * n_out + n_out;
            let input = &cache.acts[l];
            let w = &self.params[offset..offset + n_in * n_out];
            let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            gemm(n_out, batch, n_in, &delta, (1, no), input, (ni, 1), 1.0, gw, (ni, 1));
            for row in delta.chunks_exact(n_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; batch * n_in];
                gemm(batch, n_out, n_in, &delta, (no, 1), w, (ni, 1), 0.0, &mut prev, (ni, 1));
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        Ok(())
    }
}

/// Single-row case of the batched layer, so per-sample and batched passes
/// agree bit for bit.
fn dense(layer: &[f64], n_in: usize, n_out: usize, input: &[f64], out: &mut [f64]) {
    let (w, b) = layer.split_at(n_in * n_out);
    out.copy_from_slice(b);
    let (ni, no) = (n_in as isize, n_out as isize);
    gemm(1, n_in, n_out, input, (ni, 1), w, (1, ni), 1.0, out, (no, 1));
}

/// Adam over a flat parameter slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
