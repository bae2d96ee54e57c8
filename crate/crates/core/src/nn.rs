//! Dense actor-critic MLP with hand-written reverse mode and Adam.
//!
//! Parameters live in one flat `f64` vector. Layout, in order: each trunk
//! layer (weights row-major `out × in`, then bias), the policy head, then the
//! value head. Trunk activations are `tanh`; both heads are linear.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient at index {0}")]
    NonFiniteGradient(usize),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub action_count: usize,
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    weights: usize,
    bias: usize,
    inputs: usize,
    outputs: usize,
}

impl Dense {
    fn end(&self) -> usize {
        self.bias + self.outputs
    }

    fn forward(&self, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &params[self.weights..self.bias];
        let b = &params[self.bias..self.end()];
        for (row, bias) in w.chunks_exact(self.inputs).zip(b) {
            let dot: f64 = row.iter().zip(input).map(|(a, x)| a * x).sum();
            out.push(dot + bias);
        }
    }

    /// Accumulates parameter gradients and, when requested, writes the
    /// gradient with respect to the layer input.
    fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        upstream: &[f64],
        grad: &mut [f64],
        input_grad: Option<&mut Vec<f64>>,
    ) {
        let (gw, rest) = grad[self.weights..self.end()].split_at_mut(self.bias - self.weights);
        for ((row, gb), up) in gw.chunks_exact_mut(self.inputs).zip(rest.iter_mut()).zip(upstream) {
            *gb += up;
            for (g, x) in row.iter_mut().zip(input) {
                *g += up * x;
            }
        }
        if let Some(dx) = input_grad {
            dx.clear();
            dx.resize(self.inputs, 0.0);
            let w = &params[self.weights..self.bias];
            for (row, up) in w.chunks_exact(self.inputs).zip(upstream) {
                for (d, a) in dx.iter_mut().zip(row) {
                    *d += a * up;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    trunk: Vec<Dense>,
    policy: Dense,
    value: Dense,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, action_count: usize) -> Result<Self, NnError> {
        let spec = Self { input_dim, hidden, action_count };
        spec.validate()?;
        Ok(spec)
    }

    /// Default architecture per environment: 2×64 for GridWorld, 2×128 for
    /// WallJumper.
    pub fn for_env(env_id: EnvId) -> Self {
        let desc = env_id.descriptor();
        let width = match env_id {
            EnvId::GridWorld => 64,
            EnvId::WallJumper => 128,
        };
        Self { input_dim: desc.obs_dim, hidden: vec![width, width], action_count: desc.action_count }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.action_count == 0 || self.hidden.contains(&0) {
            return Err(NnError::InvalidSpec(format!("{self:?}")));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut dense = |inputs: usize, outputs: usize| {
            let layer = Dense { weights: offset, bias: offset + inputs * outputs, inputs, outputs };
            offset = layer.end();
            layer
        };
        let mut width = self.input_dim;
        let mut trunk = Vec::with_capacity(self.hidden.len());
        for &h in &self.hidden {
            trunk.push(dense(width, h));
            width = h;
        }
        let policy = dense(width, self.action_count);
        let value = dense(width, 1);
        Layout { trunk, policy, value }
    }

    pub fn param_count(&self) -> usize {
        self.layout().value.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub values: Vec<f64>,
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self { values: vec![0.0; spec.param_count()], version: 0 }
    }

    /// Scaled uniform initialization. Trunk weights are drawn from
    /// `U(-a, a)` with `a = sqrt(6 / (in + out))`; the policy head is further
    /// scaled by [`POLICY_HEAD_SCALE`] so initial action distributions are
    /// near uniform. Biases start at zero.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let layout = spec.layout();
        let mut values = vec![0.0; spec.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |layer: &Dense, scale: f64| {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt() * scale;
            for w in &mut values[layer.weights..layer.bias] {
                *w = rng.random_range(-bound..bound);
            }
        };
        for layer in &layout.trunk {
            fill(layer, 1.0);
        }
        fill(&layout.policy, POLICY_HEAD_SCALE);
        fill(&layout.value, VALUE_HEAD_SCALE);
        Self { values, version: 0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub const POLICY_HEAD_SCALE: f64 = 0.01;
pub const VALUE_HEAD_SCALE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub value: f64,
}

/// Per-sample activations retained for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[i]` the output of trunk
    /// layer `i - 1`.
    activations: Vec<Vec<f64>>,
    pub output: Option<ForwardOutput>,
}

/// Gradient of the loss with respect to one sample's network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub logits: Vec<f64>,
    pub value: f64,
}

/// A network spec bound to its precomputed parameter layout.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layout: Layout,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let layout = spec.layout();
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.layout.value.end()
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::DimensionMismatch { expected: self.param_count(), got: params.len() });
        }
        if input.len() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch { expected: self.spec.input_dim, got: input.len() });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<ForwardOutput, NnError> {
        let mut cache = ForwardCache::default();
        self.forward_cached(params, input, &mut cache)?;
        Ok(cache.output.take().expect("forward_cached sets output"))
    }

    pub fn forward_cached(
        &self,
        params: &[f64],
        input: &[f64],
        cache: &mut ForwardCache,
    ) -> Result<(), NnError> {
        self.check(params, input)?;
        let depth = self.layout.trunk.len();
        cache.activations.resize_with(depth + 1, Vec::new);
        cache.activations[0].clear();
        cache.activations[0].extend_from_slice(input);
        for (i, layer) in self.layout.trunk.iter().enumerate() {
            let (done, rest) = cache.activations.split_at_mut(i + 1);
            let out = &mut rest[0];
            layer.forward(params, &done[i], out);
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        let features = &cache.activations[depth];
        let mut logits = Vec::with_capacity(self.spec.action_count);
        self.layout.policy.forward(params, features, &mut logits);
        let mut value = Vec::with_capacity(1);
        self.layout.value.forward(params, features, &mut value);
        cache.output = Some(ForwardOutput { logits, value: value[0] });
        Ok(())
    }

    /// Accumulates `d loss / d params` for one cached sample into `grad`.
    pub fn backward_cached(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        upstream: &OutputGrad,
        grad: &mut [f64],
    ) -> Result<(), NnError> {
        if upstream.logits.len() != self.spec.action_count {
            return Err(NnError::DimensionMismatch {
                expected: self.spec.action_count,
                got: upstream.logits.len(),
            });
        }
        if grad.len() != self.param_count() {
            return Err(NnError::DimensionMismatch { expected: self.param_count(), got: grad.len() });
        }
        let depth = self.layout.trunk.len();
        let features = &cache.activations[depth];
        let mut d_features = Vec::new();
        let mut d_value = Vec::new();
        self.layout.policy.backward(params, features, &upstream.logits, grad, Some(&mut d_features));
        self.layout.value.backward(params, features, &[upstream.value], grad, Some(&mut d_value));
        for (a, b) in d_features.iter_mut().zip(&d_value) {
            *a += b;
        }

        let mut upstream_act = d_features;
        let mut next = Vec::new();
        for i in (0..depth).rev() {
            let out = &cache.activations[i + 1];
            for (d, h) in upstream_act.iter_mut().zip(out) {
                *d *= 1.0 - h * h;
            }
            let need_input = i > 0;
            self.layout.trunk[i].backward(
                params,
                &cache.activations[i],
                &upstream_act,
                grad,
                need_input.then_some(&mut next),
            );
            std::mem::swap(&mut upstream_act, &mut next);
        }
        Ok(())
    }

    /// Gradient of a scalar loss over a batch, given the loss gradient with
    /// respect to every sample's outputs.
    pub fn backward(
        &self,
        params: &[f64],
        inputs: &[&[f64]],
        upstream: &[OutputGrad],
    ) -> Result<Vec<f64>, NnError> {
        if inputs.len() != upstream.len() {
            return Err(NnError::DimensionMismatch { expected: inputs.len(), got: upstream.len() });
        }
        let mut grad = vec![0.0; self.param_count()];
        let mut cache = ForwardCache::default();
        for (input, up) in inputs.iter().zip(upstream) {
            self.forward_cached(params, input, &mut cache)?;
            self.backward_cached(params, &cache, up, &mut grad)?;
        }
        Ok(grad)
    }
}

pub fn forward(
    params: &PolicyParams,
    spec: &MlpSpec,
    obs: &[f64],
) -> Result<(Vec<f64>, f64), NnError> {
    let out = Mlp::new(spec.clone())?.forward(&params.values, obs)?;
    Ok((out.logits, out.value))
}

pub fn backward(
    params: &PolicyParams,
    spec: &MlpSpec,
    inputs: &[&[f64]],
    upstream: &[OutputGrad],
) -> Result<Vec<f64>, NnError> {
    Mlp::new(spec.clone())?.backward(&params.values, inputs, upstream)
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub timestep: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            timestep: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam step, in place. The policy version is bumped
    /// by the caller once per training batch, not here.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(NnError::DimensionMismatch { expected: self.first_moment.len(), got: grads.len() });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient(i));
        }
        self.timestep += 1;
        let t = self.timestep as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
        Ok(())
    }
}

pub fn adam_update(
    state: &mut AdamState,
    params: &mut PolicyParams,
    grads: &[f64],
) -> Result<(), NnError> {
    state.update(&mut params.values, grads)
}
