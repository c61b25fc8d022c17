//! Fully connected dynamics network: parameter container, forward/backward
//! passes, finite-difference Hessian-vector products, and optimizers.
//!
//! The network is fixed at 6 -> 32 -> 32 -> 4 (tanh hidden layers, linear
//! output). Parameters live in a single flat `f64` array so optimizers and
//! second-order probes are plain vector operations, independent of layer
//! layout. Flat layout, in order:
//!
//! ```text
//! W1 (32x6, row-major) | b1 (32) | W2 (32x32) | b2 (32) | W3 (4x32) | b3 (4)
//! ```
//!
//! Total 1412 coefficients. All operations here are pure: identical inputs
//! produce bit-identical outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INPUT_DIM: usize = 6;
pub const HIDDEN_DIM: usize = 32;
pub const OUTPUT_DIM: usize = 4;

const W1_OFF: usize = 0;
const B1_OFF: usize = W1_OFF + HIDDEN_DIM * INPUT_DIM; // 192
const W2_OFF: usize = B1_OFF + HIDDEN_DIM; // 224
const B2_OFF: usize = W2_OFF + HIDDEN_DIM * HIDDEN_DIM; // 1248
const W3_OFF: usize = B2_OFF + HIDDEN_DIM; // 1280
const B3_OFF: usize = W3_OFF + OUTPUT_DIM * HIDDEN_DIM; // 1408

/// Total number of network coefficients.
pub const PARAM_COUNT: usize = B3_OFF + OUTPUT_DIM; // 1412

/// Flat parameter vector of the 6-32-32-4 network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams(pub Vec<f64>);

impl MlpParams {
    pub fn zeros() -> Self {
        MlpParams(vec![0.0; PARAM_COUNT])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_flat(w: Vec<f64>) -> Result<Self> {
        if w.len() != PARAM_COUNT {
            return Err(Error::ShapeMismatch {
                what: "MlpParams",
                expected: PARAM_COUNT,
                got: w.len(),
            });
        }
        Ok(MlpParams(w))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

/// Loss gradient with the same flat layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros() -> Self {
        Gradient(vec![0.0; PARAM_COUNT])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            *g *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    /// Rescales in place so the Euclidean norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with the canonical constants (beta1 0.9, beta2 0.999,
    /// eps 1e-8).
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Draws weights uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer;
/// biases start at zero.
pub fn init_params<R: Rng>(rng: &mut R) -> MlpParams {
    let mut w = vec![0.0; PARAM_COUNT];
    let fill = |w: &mut [f64], off: usize, rows: usize, cols: usize, rng: &mut R| {
        let s = 1.0 / (cols as f64).sqrt();
        for k in 0..rows * cols {
            w[off + k] = rng.gen_range(-s..=s);
        }
    };
    fill(&mut w, W1_OFF, HIDDEN_DIM, INPUT_DIM, rng);
    fill(&mut w, W2_OFF, HIDDEN_DIM, HIDDEN_DIM, rng);
    fill(&mut w, W3_OFF, OUTPUT_DIM, HIDDEN_DIM, rng);
    MlpParams(w)
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub h1: [f64; HIDDEN_DIM],
    pub h2: [f64; HIDDEN_DIM],
    pub y: [f64; OUTPUT_DIM],
}

/// Forward pass with intermediate activations.
pub fn forward_tape(params: &MlpParams, input: &[f64; INPUT_DIM]) -> ForwardTape {
    let w = &params.0;
    let mut h1 = [0.0; HIDDEN_DIM];
    for o in 0..HIDDEN_DIM {
        let mut acc = w[B1_OFF + o];
        let row = W1_OFF + o * INPUT_DIM;
        for i in 0..INPUT_DIM {
            acc += w[row + i] * input[i];
        }
        h1[o] = acc.tanh();
    }
    let mut h2 = [0.0; HIDDEN_DIM];
    for o in 0..HIDDEN_DIM {
        let mut acc = w[B2_OFF + o];
        let row = W2_OFF + o * HIDDEN_DIM;
        for i in 0..HIDDEN_DIM {
            acc += w[row + i] * h1[i];
        }
        h2[o] = acc.tanh();
    }
    let mut y = [0.0; OUTPUT_DIM];
    for o in 0..OUTPUT_DIM {
        let mut acc = w[B3_OFF + o];
        let row = W3_OFF + o * HIDDEN_DIM;
        for i in 0..HIDDEN_DIM {
            acc += w[row + i] * h2[i];
        }
        y[o] = acc;
    }
    ForwardTape { h1, h2, y }
}

/// Evaluates the network: tanh hidden layers, linear output.
pub fn forward(params: &MlpParams, input: &[f64; INPUT_DIM]) -> [f64; OUTPUT_DIM] {
    forward_tape(params, input).y
}

/// Single-sample reverse pass. Accumulates the parameter gradient into
/// `grad` and returns the gradient with respect to the network input, which
/// rollout backpropagation needs to chain through time.
pub fn backward_single(
    params: &MlpParams,
    input: &[f64; INPUT_DIM],
    tape: &ForwardTape,
    output_grad: &[f64; OUTPUT_DIM],
    grad: &mut Gradient,
) -> [f64; INPUT_DIM] {
    let w = &params.0;
    let g = &mut grad.0;

    // Output layer (linear): delta3 = output_grad.
    let mut dh2 = [0.0; HIDDEN_DIM];
    for o in 0..OUTPUT_DIM {
        let d = output_grad[o];
        g[B3_OFF + o] += d;
        let row = W3_OFF + o * HIDDEN_DIM;
        for i in 0..HIDDEN_DIM {
            g[row + i] += d * tape.h2[i];
            dh2[i] += w[row + i] * d;
        }
    }

    // Second hidden layer.
    let mut dh1 = [0.0; HIDDEN_DIM];
    for o in 0..HIDDEN_DIM {
        let d = dh2[o] * (1.0 - tape.h2[o] * tape.h2[o]);
        g[B2_OFF + o] += d;
        let row = W2_OFF + o * HIDDEN_DIM;
        for i in 0..HIDDEN_DIM {
            g[row + i] += d * tape.h1[i];
            dh1[i] += w[row + i] * d;
        }
    }

    // First hidden layer.
    let mut dx = [0.0; INPUT_DIM];
    for o in 0..HIDDEN_DIM {
        let d = dh1[o] * (1.0 - tape.h1[o] * tape.h1[o]);
        g[B1_OFF + o] += d;
        let row = W1_OFF + o * INPUT_DIM;
        for i in 0..INPUT_DIM {
            g[row + i] += d * input[i];
            dx[i] += w[row + i] * d;
        }
    }
    dx
}

/// Reverse pass over a batch. Returns the summed parameter gradient and the
/// per-sample input gradients.
pub fn backward(
    params: &MlpParams,
    inputs: &[[f64; INPUT_DIM]],
    output_grads: &[[f64; OUTPUT_DIM]],
) -> Result<(Gradient, Vec<[f64; INPUT_DIM]>)> {
    if inputs.is_empty() {
        return Err(Error::InvalidArg("backward: empty batch".into()));
    }
    if inputs.len() != output_grads.len() {
        return Err(Error::ShapeMismatch {
            what: "backward batch",
            expected: inputs.len(),
            got: output_grads.len(),
        });
    }
    let mut grad = Gradient::zeros();
    let mut input_grads = Vec::with_capacity(inputs.len());
    for (x, go) in inputs.iter().zip(output_grads) {
        let tape = forward_tape(params, x);
        input_grads.push(backward_single(params, x, &tape, go, &mut grad));
    }
    Ok((grad, input_grads))
}

/// Central-difference Hessian-vector product of a gradient oracle.
///
/// Layout-agnostic: `theta` is any flat parameter vector and `grad_fn` its
/// loss-gradient oracle. Returns
/// `(grad(theta + eps*v_hat) - grad(theta - eps*v_hat)) / (2 eps) * ||v||`.
pub fn hvp<F>(theta: &[f64], grad_fn: F, v: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArg(format!("hvp: eps must be > 0, got {eps}")));
    }
    if v.len() != theta.len() {
        return Err(Error::ShapeMismatch {
            what: "hvp direction",
            expected: theta.len(),
            got: v.len(),
        });
    }
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::InvalidArg(format!(
            "hvp: direction norm {norm:.3e} below 1e-12"
        )));
    }
    let plus: Vec<f64> = theta
        .iter()
        .zip(v)
        .map(|(t, d)| t + eps * d / norm)
        .collect();
    let minus: Vec<f64> = theta
        .iter()
        .zip(v)
        .map(|(t, d)| t - eps * d / norm)
        .collect();
    let gp = grad_fn(&plus);
    let gm = grad_fn(&minus);
    if gp.len() != theta.len() || gm.len() != theta.len() {
        return Err(Error::ShapeMismatch {
            what: "hvp gradient oracle",
            expected: theta.len(),
            got: gp.len(),
        });
    }
    Ok(gp
        .iter()
        .zip(&gm)
        .map(|(p, m)| (p - m) / (2.0 * eps) * norm)
        .collect())
}

/// One gradient-descent step: `params - eta * grad`.
pub fn sgd_step(params: &MlpParams, grad: &Gradient, eta: f64) -> MlpParams {
    assert!(eta > 0.0, "sgd_step: eta must be > 0");
    MlpParams(
        params
            .0
            .iter()
            .zip(&grad.0)
            .map(|(p, g)| p - eta * g)
            .collect(),
    )
}

/// One Adam step with bias correction. Returns the updated parameters and
/// advanced optimizer state.
pub fn adam_step(
    params: &MlpParams,
    grad: &Gradient,
    state: &AdamState,
    lr: f64,
) -> (MlpParams, AdamState) {
    assert!(lr > 0.0, "adam_step: lr must be > 0");
    let mut st = state.clone();
    st.t += 1;
    let bc1 = 1.0 - st.beta1.powi(st.t as i32);
    let bc2 = 1.0 - st.beta2.powi(st.t as i32);
    let mut out = params.0.clone();
    for i in 0..out.len() {
        let g = grad.0[i];
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
        let m_hat = st.m[i] / bc1;
        let v_hat = st.v[i] / bc2;
        out[i] -= lr * m_hat / (v_hat.sqrt() + st.eps);
    }
    (MlpParams(out), st)
}

/// Per-channel standardization of the 6 network inputs. Statistics are fit
/// once on the pre-training dataset and frozen; online adaptation never
/// touches them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; INPUT_DIM],
    pub std: [f64; INPUT_DIM],
}

impl Normalizer {
    /// No-op normalizer (zero mean, unit scale).
    pub fn identity() -> Self {
        Normalizer {
            mean: [0.0; INPUT_DIM],
            std: [1.0; INPUT_DIM],
        }
    }

    /// Fits per-channel mean and standard deviation. Channels with
    /// negligible spread get unit scale so constant inputs pass through.
    pub fn fit(samples: &[[f64; INPUT_DIM]]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArg("Normalizer::fit: no samples".into()));
        }
        let n = samples.len() as f64;
        let mut mean = [0.0; INPUT_DIM];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = [0.0; INPUT_DIM];
        for s in samples {
            for i in 0..INPUT_DIM {
                let d = s[i] - mean[i];
                var[i] += d * d;
            }
        }
        let mut std = [0.0; INPUT_DIM];
        for i in 0..INPUT_DIM {
            std[i] = (var[i] / n).sqrt();
            if std[i] < 1e-8 {
                std[i] = 1.0;
            }
        }
        Ok(Normalizer { mean, std })
    }

    pub fn normalize(&self, raw: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        let mut z = [0.0; INPUT_DIM];
        for i in 0..INPUT_DIM {
            z[i] = (raw[i] - self.mean[i]) / self.std[i];
        }
        z
    }
}

/// Versioned checkpoint: layer sizes, flat coefficients, and the frozen
/// input statistics. JSON round-trips `f64` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: &MlpParams, norm: &Normalizer) -> Self {
        Checkpoint {
            version: 1,
            layer_sizes: vec![INPUT_DIM, HIDDEN_DIM, HIDDEN_DIM, OUTPUT_DIM],
            params: params.0.clone(),
            norm_mean: norm.mean.to_vec(),
            norm_std: norm.std.to_vec(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::MissingInput {
            path: path.display().to_string(),
            hint: format!("run `kartlab pretrain` first ({e})"),
        })?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.layer_sizes != [INPUT_DIM, HIDDEN_DIM, HIDDEN_DIM, OUTPUT_DIM] {
            return Err(Error::Config(format!(
                "checkpoint layer sizes {:?} do not match {:?}",
                self.layer_sizes,
                [INPUT_DIM, HIDDEN_DIM, HIDDEN_DIM, OUTPUT_DIM]
            )));
        }
        if self.params.len() != PARAM_COUNT {
            return Err(Error::ShapeMismatch {
                what: "checkpoint params",
                expected: PARAM_COUNT,
                got: self.params.len(),
            });
        }
        if !self.params.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("checkpoint params".into()));
        }
        Ok(())
    }

    pub fn into_parts(self) -> Result<(MlpParams, Normalizer)> {
        self.validate()?;
        let mut mean = [0.0; INPUT_DIM];
        let mut std = [1.0; INPUT_DIM];
        if self.norm_mean.len() != INPUT_DIM || self.norm_std.len() != INPUT_DIM {
            return Err(Error::ShapeMismatch {
                what: "checkpoint normalizer",
                expected: INPUT_DIM,
                got: self.norm_mean.len(),
            });
        }
        mean.copy_from_slice(&self.norm_mean);
        std.copy_from_slice(&self.norm_std);
        Ok((MlpParams(self.params), Normalizer { mean, std }))
    }
}
