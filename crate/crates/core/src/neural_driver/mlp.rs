//! Small fully connected networks with optional per-weight positivity.
//!
//! A weight flagged in the positivity mask is stored as an unconstrained raw
//! value and used as `softplus(raw)`, so it is strictly positive for any raw
//! parameter. Hidden layers share one activation; the output layer is linear.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DriverError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Elu,
    Silu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(x),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(x),
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    /// Non-decreasing on all of R. SiLU dips below zero slope for x < -1.28.
    pub fn is_monotone(self) -> bool {
        !matches!(self, Activation::Silu)
    }

    /// Upper bound on |activation'|.
    pub fn lipschitz(self) -> f64 {
        match self {
            // max of sigma(x)(1 + x(1 - sigma(x))) is about 1.0998
            Activation::Silu => 1.1,
            _ => 1.0,
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 35.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameters of a feedforward network `R^{n_in} -> R`.
///
/// `raw_weights[l]` is the row-major `layer_sizes[l+1] x layer_sizes[l]`
/// matrix of layer `l`; `positivity_mask[l]` has the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    raw_weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
    positivity_mask: Vec<Vec<bool>>,
    effective: Vec<Vec<f64>>,
    /// d(effective)/d(raw): sigmoid(raw) on masked entries, 1 elsewhere.
    chain: Vec<Vec<f64>>,
}

/// Per-layer pre-activations and outputs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `pre[l]` is the pre-activation vector of layer `l`.
    pub pre: Vec<Vec<f64>>,
    /// `post[0]` is the input; `post[l+1]` is the output of layer `l`.
    pub post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> f64 {
        self.post.last().map(|v| v[0]).unwrap_or(f64::NAN)
    }
}

impl MlpParams {
    pub fn new(
        layer_sizes: Vec<usize>,
        raw_weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
        positivity_mask: Vec<Vec<bool>>,
    ) -> Result<Self, DriverError> {
        if layer_sizes.len() < 2 {
            return Err(DriverError::Shape("layer_sizes needs at least input and output".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(DriverError::Shape("layer sizes must be positive".into()));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(DriverError::Shape("networks have a scalar output".into()));
        }
        let n_layers = layer_sizes.len() - 1;
        if raw_weights.len() != n_layers || biases.len() != n_layers || positivity_mask.len() != n_layers {
            return Err(DriverError::Shape(format!("expected {n_layers} weight, bias and mask entries")));
        }
        for l in 0..n_layers {
            let (rows, cols) = (layer_sizes[l + 1], layer_sizes[l]);
            if raw_weights[l].len() != rows * cols {
                return Err(DriverError::Shape(format!(
                    "raw_weights[{l}] has {} entries, expected {}",
                    raw_weights[l].len(),
                    rows * cols
                )));
            }
            if positivity_mask[l].len() != rows * cols {
                return Err(DriverError::Shape(format!(
                    "positivity_mask[{l}] has {} entries, expected {}",
                    positivity_mask[l].len(),
                    rows * cols
                )));
            }
            if biases[l].len() != rows {
                return Err(DriverError::Shape(format!(
                    "biases[{l}] has {} entries, expected {rows}",
                    biases[l].len()
                )));
            }
        }
        if raw_weights.iter().chain(biases.iter()).flatten().any(|v| !v.is_finite()) {
            return Err(DriverError::Domain("network parameters must be finite".into()));
        }
        let mut params = MlpParams {
            layer_sizes,
            raw_weights,
            biases,
            activation,
            positivity_mask,
            effective: Vec::new(),
            chain: Vec::new(),
        };
        params.refresh();
        Ok(params)
    }

    /// A network with every weight zero except those given; no positivity.
    pub fn linear(weights: &[f64], bias: f64) -> Self {
        let n = weights.len();
        MlpParams::new(vec![n, 1], vec![weights.to_vec()], vec![vec![bias]], Activation::Identity, vec![vec![false; n]])
            .expect("linear network shape is valid")
    }

    /// Random initialisation. Weights on every path out of `monotone_input`
    /// (if any) are masked positive, which makes the output non-decreasing in
    /// that input for monotone activations.
    pub fn random<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        monotone_input: Option<usize>,
        output_scale: f64,
        rng: &mut R,
    ) -> Self {
        let n_layers = layer_sizes.len() - 1;
        let mut raw_weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (rows, cols) = (layer_sizes[l + 1], layer_sizes[l]);
            let mut scale = (1.0 / cols as f64).sqrt();
            if l + 1 == n_layers {
                scale *= output_scale;
            }
            let normal = Normal::new(0.0, scale).expect("positive scale");
            let mut w = Vec::with_capacity(rows * cols);
            let mut m = Vec::with_capacity(rows * cols);
            for _r in 0..rows {
                for c in 0..cols {
                    let masked = match monotone_input {
                        Some(k) => l > 0 || c == k,
                        None => false,
                    };
                    let draw: f64 = normal.sample(rng);
                    if masked {
                        // effective weight |draw|, kept away from softplus underflow
                        w.push(softplus_inverse(draw.abs().max(1e-3 * scale)));
                    } else {
                        w.push(draw);
                    }
                    m.push(masked);
                }
            }
            raw_weights.push(w);
            biases.push(vec![0.0; rows]);
            masks.push(m);
        }
        MlpParams::new(layer_sizes.to_vec(), raw_weights, biases, activation, masks)
            .expect("random network shape is valid")
    }

    fn refresh(&mut self) {
        self.effective = self
            .raw_weights
            .iter()
            .zip(&self.positivity_mask)
            .map(|(w, m)| w.iter().zip(m).map(|(&raw, &pos)| if pos { softplus(raw) } else { raw }).collect())
            .collect();
        self.chain = self
            .raw_weights
            .iter()
            .zip(&self.positivity_mask)
            .map(|(w, m)| w.iter().zip(m).map(|(&raw, &pos)| if pos { sigmoid(raw) } else { 1.0 }).collect())
            .collect();
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }
    pub fn raw_weights(&self) -> &[Vec<f64>] {
        &self.raw_weights
    }
    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn positivity_mask(&self) -> &[Vec<bool>] {
        &self.positivity_mask
    }
    pub fn effective_weights(&self) -> &[Vec<f64>] {
        &self.effective
    }
    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.raw_weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Raw weights then biases, layer by layer.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.raw_weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Inverse of [`param_vector`](Self::param_vector). Consumes `n_params` entries.
    pub fn set_param_vector(&mut self, theta: &[f64]) {
        let mut k = 0;
        for (w, b) in self.raw_weights.iter_mut().zip(self.biases.iter_mut()) {
            let nw = w.len();
            w.copy_from_slice(&theta[k..k + nw]);
            k += nw;
            let nb = b.len();
            b.copy_from_slice(&theta[k..k + nb]);
            k += nb;
        }
        self.refresh();
    }

    /// Every weight on a path from input `k` to the output is masked positive.
    pub fn is_monotone_in(&self, k: usize) -> bool {
        if !self.activation.is_monotone() && self.n_layers() > 1 {
            return false;
        }
        let cols = self.layer_sizes[0];
        let rows = self.layer_sizes[1];
        if !(0..rows).all(|r| self.positivity_mask[0][r * cols + k]) {
            return false;
        }
        self.positivity_mask[1..].iter().all(|m| m.iter().all(|&p| p))
    }

    /// True when input `k` has all-zero unmasked first-layer weights, so the
    /// output does not depend on it.
    pub fn ignores_input(&self, k: usize) -> bool {
        let cols = self.layer_sizes[0];
        (0..self.layer_sizes[1]).all(|r| {
            let idx = r * cols + k;
            !self.positivity_mask[0][idx] && self.raw_weights[0][idx] == 0.0
        })
    }

    pub fn forward(&self, input: &[f64]) -> f64 {
        debug_assert_eq!(input.len(), self.n_inputs());
        let mut current: Vec<f64> = input.to_vec();
        let n_layers = self.n_layers();
        for l in 0..n_layers {
            let cols = self.layer_sizes[l];
            let rows = self.layer_sizes[l + 1];
            let w = &self.effective[l];
            let b = &self.biases[l];
            let mut next = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = &w[r * cols..(r + 1) * cols];
                let z = b[r] + row.iter().zip(&current).map(|(a, x)| a * x).sum::<f64>();
                next.push(if l + 1 < n_layers { self.activation.apply(z) } else { z });
            }
            current = next;
        }
        current[0]
    }

    pub fn forward_trace(&self, input: &[f64]) -> ForwardTrace {
        let n_layers = self.n_layers();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(n_layers + 1);
        post.push(input.to_vec());
        for l in 0..n_layers {
            let cols = self.layer_sizes[l];
            let rows = self.layer_sizes[l + 1];
            let w = &self.effective[l];
            let b = &self.biases[l];
            let prev = &post[l];
            let z: Vec<f64> = (0..rows)
                .map(|r| b[r] + w[r * cols..(r + 1) * cols].iter().zip(prev).map(|(a, x)| a * x).sum::<f64>())
                .collect();
            let a: Vec<f64> =
                if l + 1 < n_layers { z.iter().map(|&v| self.activation.apply(v)).collect() } else { z.clone() };
            pre.push(z);
            post.push(a);
        }
        ForwardTrace { pre, post }
    }

    /// Backward pass from d(output) = 1. Returns the gradient of the output
    /// with respect to the inputs and, if requested, accumulates
    /// `scale * d(output)/d(raw parameter)` into `param_grad` (laid out as
    /// [`param_vector`](Self::param_vector)).
    pub fn backward(&self, trace: &ForwardTrace, scale: f64, param_grad: Option<&mut [f64]>) -> Vec<f64> {
        let n_layers = self.n_layers();
        // delta = d(out)/d(pre-activation of layer l)
        let mut delta = vec![1.0];
        let mut grads = param_grad;
        let offsets = self.param_offsets();
        for l in (0..n_layers).rev() {
            let cols = self.layer_sizes[l];
            let rows = self.layer_sizes[l + 1];
            let w = &self.effective[l];
            if let Some(g) = grads.as_deref_mut() {
                let (w_off, b_off) = offsets[l];
                let input = &trace.post[l];
                for r in 0..rows {
                    let d = delta[r] * scale;
                    if d == 0.0 {
                        continue;
                    }
                    let chain = &self.chain[l][r * cols..(r + 1) * cols];
                    let gw = &mut g[w_off + r * cols..w_off + (r + 1) * cols];
                    for c in 0..cols {
                        gw[c] += d * input[c] * chain[c];
                    }
                    g[b_off + r] += d;
                }
            }
            let mut prev = vec![0.0; cols];
            for r in 0..rows {
                let d = delta[r];
                for c in 0..cols {
                    prev[c] += w[r * cols + c] * d;
                }
            }
            if l > 0 {
                for (c, p) in prev.iter_mut().enumerate() {
                    *p *= self.activation.derivative(trace.pre[l - 1][c]);
                }
            }
            delta = prev;
        }
        delta
    }

    /// Output and partial derivative with respect to input `k`.
    pub fn value_and_partial(&self, input: &[f64], k: usize) -> (f64, f64) {
        let trace = self.forward_trace(input);
        let grad = self.backward(&trace, 1.0, None);
        (trace.output(), grad[k])
    }

    fn param_offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_layers());
        let mut k = 0;
        for (w, b) in self.raw_weights.iter().zip(&self.biases) {
            out.push((k, k + w.len()));
            k += w.len() + b.len();
        }
        out
    }

    /// Upper bound on `|d output / d input_k|` over all inputs, from
    /// elementwise absolute weight products and the activation's Lipschitz
    /// constant.
    pub fn input_lipschitz_bound(&self, k: usize) -> f64 {
        let cols0 = self.layer_sizes[0];
        let mut v: Vec<f64> = (0..self.layer_sizes[1]).map(|r| self.effective[0][r * cols0 + k].abs()).collect();
        let lip = self.activation.lipschitz();
        for l in 1..self.n_layers() {
            let cols = self.layer_sizes[l];
            let rows = self.layer_sizes[l + 1];
            v = (0..rows)
                .map(|r| (0..cols).map(|c| self.effective[l][r * cols + c].abs() * lip * v[c]).sum())
                .collect();
        }
        v[0]
    }
}
