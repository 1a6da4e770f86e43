//! Small fully-connected conditioner networks and the Adam optimizer.
//!
//! These MLPs produce the scale and shift of each flow variable from the
//! values of its causal predecessors, so they stay tiny (one or two hidden
//! layers of ~10 units). Everything is plain `f64` with row-major weight
//! matrices; gradients are exact reverse-mode and are checked against central
//! finite differences in the tests.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::seeded;
use crate::{Error, Result};

/// Activation applied to hidden layers (the output layer is always linear).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative recovered from the post-activation value. Valid for the
    /// supported activations because each is monotone with sign-preserving
    /// output.
    #[inline]
    fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if a > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Default hidden activation.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Whether a flat-parameter segment holds weights or biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// One contiguous run of a [`ParamVector`]: the weights or biases of one
/// linear layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSegment {
    pub layer: usize,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
    /// (out_dim, in_dim) for weights, (out_dim, 1) for biases.
    pub shape: (usize, usize),
}

/// Segment table mapping flat indices back to (layer, kind, index).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub segments: Vec<ParamSegment>,
    pub total_len: usize,
}

impl ParamLayout {
    /// Coordinates of a flat index: (layer, kind, index within segment).
    pub fn coordinate_of(&self, flat: usize) -> Option<(usize, ParamKind, usize)> {
        self.segments
            .iter()
            .find(|s| flat >= s.offset && flat < s.offset + s.len)
            .map(|s| (s.layer, s.kind, flat - s.offset))
    }
}

/// Flat vector of all trainable parameters plus its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fully-connected network with linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionerNet {
    layer_dims: Vec<usize>,
    /// Row-major (out_dim x in_dim) weight matrix per linear layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

impl ConditionerNet {
    /// Seeded init: weights uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)],
    /// biases zero. Identical seeds give bit-identical parameters.
    pub fn init(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let mut rng = seeded(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut layer = Vec::with_capacity(fan_out * fan_in);
            for _ in 0..fan_out * fan_in {
                layer.push(rng.gen_range(-bound..=bound));
            }
            weights.push(layer);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Builds a net from explicit parameters (hand-set oracles, tests).
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        Self::validate_dims(&layer_dims)?;
        let n_layers = layer_dims.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(Error::Shape(format!(
                "expected {n_layers} weight/bias layers, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        for (l, w) in layer_dims.windows(2).enumerate() {
            if weights[l].len() != w[0] * w[1] {
                return Err(Error::Shape(format!(
                    "layer {l} weights: expected {}x{} = {} values, got {}",
                    w[1],
                    w[0],
                    w[0] * w[1],
                    weights[l].len()
                )));
            }
            if biases[l].len() != w[1] {
                return Err(Error::Shape(format!(
                    "layer {l} biases: expected {} values, got {}",
                    w[1],
                    biases[l].len()
                )));
            }
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            activation,
        })
    }

    /// Affine map `y = Wx + b` as a degenerate no-hidden-layer net.
    pub fn linear(in_dim: usize, out_dim: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        Self::from_parts(
            vec![in_dim, out_dim],
            vec![weights],
            vec![biases],
            Activation::Identity,
        )
    }

    fn validate_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "layer_dims needs at least input and output, got {layer_dims:?}"
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "layer_dims must be positive, got {layer_dims:?}"
            )));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn in_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Flat parameter layout: per layer, weights (row-major) then biases.
    pub fn param_layout(&self) -> ParamLayout {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (l, w) in self.layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            segments.push(ParamSegment {
                layer: l,
                kind: ParamKind::Weight,
                offset,
                len: fan_out * fan_in,
                shape: (fan_out, fan_in),
            });
            offset += fan_out * fan_in;
            segments.push(ParamSegment {
                layer: l,
                kind: ParamKind::Bias,
                offset,
                len: fan_out,
                shape: (fan_out, 1),
            });
            offset += fan_out;
        }
        ParamLayout {
            segments,
            total_len: offset,
        }
    }

    /// Parameters flattened per [`ParamLayout`] order.
    pub fn flatten(&self) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        for l in 0..self.weights.len() {
            values.extend_from_slice(&self.weights[l]);
            values.extend_from_slice(&self.biases[l]);
        }
        ParamVector {
            values,
            layout: self.param_layout(),
        }
    }

    /// Writes flat parameters back; layout (and thus shape) must match.
    pub fn unflatten(&mut self, params: &ParamVector) -> Result<()> {
        if params.layout != self.param_layout() {
            return Err(Error::Shape("parameter layout does not match net".into()));
        }
        self.load_flat(&params.values)
    }

    pub(crate) fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut cursor = 0;
        for l in 0..self.weights.len() {
            let wl = self.weights[l].len();
            self.weights[l].copy_from_slice(&values[cursor..cursor + wl]);
            cursor += wl;
            let bl = self.biases[l].len();
            self.biases[l].copy_from_slice(&values[cursor..cursor + bl]);
            cursor += bl;
        }
        Ok(())
    }

    pub(crate) fn store_flat(&self, out: &mut Vec<f64>) {
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
    }

    /// Forward pass; hidden layers use the activation, output is linear.
    pub fn net_forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = NetScratch::for_net(self);
        self.forward_scratch(input, &mut scratch)?;
        Ok(scratch.output().to_vec())
    }

    pub(crate) fn forward_scratch(&self, input: &[f64], scratch: &mut NetScratch) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "net expects input dim {}, got {}",
                self.in_dim(),
                input.len()
            )));
        }
        scratch.acts[0].copy_from_slice(input);
        let n_layers = self.weights.len();
        for l in 0..n_layers {
            let (in_dim, out_dim) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let (prev, next) = scratch.acts.split_at_mut(l + 1);
            let a_in = &prev[l];
            let a_out = &mut next[0];
            let w = &self.weights[l];
            let b = &self.biases[l];
            for o in 0..out_dim {
                let row = &w[o * in_dim..(o + 1) * in_dim];
                let mut acc = b[o];
                for i in 0..in_dim {
                    acc += row[i] * a_in[i];
                }
                a_out[o] = if l < n_layers - 1 {
                    self.activation.apply(acc)
                } else {
                    acc
                };
            }
        }
        Ok(())
    }

    /// Gradients of `sum(output * out_grad)` with respect to parameters and
    /// input. Runs its own forward pass internally.
    pub fn net_backward(&self, input: &[f64], out_grad: &[f64]) -> Result<(ParamVector, Vec<f64>)> {
        let mut scratch = NetScratch::for_net(self);
        let mut pgrad = vec![0.0; self.param_count()];
        let mut igrad = vec![0.0; self.in_dim()];
        self.backward_scratch(input, out_grad, &mut scratch, &mut pgrad, &mut igrad)?;
        Ok((
            ParamVector {
                values: pgrad,
                layout: self.param_layout(),
            },
            igrad,
        ))
    }

    /// Accumulating backward pass: adds parameter gradients into `pgrad`
    /// (flat layout order) and input gradients into `igrad`.
    pub(crate) fn backward_scratch(
        &self,
        input: &[f64],
        out_grad: &[f64],
        scratch: &mut NetScratch,
        pgrad: &mut [f64],
        igrad: &mut [f64],
    ) -> Result<()> {
        if out_grad.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "net expects output grad dim {}, got {}",
                self.out_dim(),
                out_grad.len()
            )));
        }
        if pgrad.len() != self.param_count() || igrad.len() != self.in_dim() {
            return Err(Error::Shape("gradient buffer size mismatch".into()));
        }
        self.forward_scratch(input, scratch)?;

        let n_layers = self.weights.len();
        scratch.delta.clear();
        scratch.delta.extend_from_slice(out_grad);
        // Offsets of each layer's weight segment in the flat layout.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.layer_dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..n_layers).rev() {
            let (in_dim, out_dim) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let a_in = &scratch.acts[l];
            let w = &self.weights[l];
            let seg = offsets[l];
            // dW = delta (x) a_in, db = delta
            for o in 0..out_dim {
                let d = scratch.delta[o];
                let wrow = &mut pgrad[seg + o * in_dim..seg + (o + 1) * in_dim];
                for i in 0..in_dim {
                    wrow[i] += d * a_in[i];
                }
                pgrad[seg + out_dim * in_dim + o] += d;
            }
            // Backprop into layer input: W^T delta, times activation deriv
            // unless this is the outermost input.
            scratch.delta_next.clear();
            scratch.delta_next.resize(in_dim, 0.0);
            for o in 0..out_dim {
                let d = scratch.delta[o];
                let row = &w[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    scratch.delta_next[i] += row[i] * d;
                }
            }
            if l == 0 {
                for i in 0..in_dim {
                    igrad[i] += scratch.delta_next[i];
                }
            } else {
                for i in 0..in_dim {
                    scratch.delta_next[i] *=
                        self.activation.deriv_from_output(scratch.acts[l][i]);
                }
                std::mem::swap(&mut scratch.delta, &mut scratch.delta_next);
            }
        }
        Ok(())
    }
}

/// Reusable forward/backward buffers for one net shape.
#[derive(Debug, Clone)]
pub(crate) struct NetScratch {
    /// acts[0] = input; acts[l] = output of linear layer l-1 (post-activation
    /// for hidden layers, raw for the final layer).
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl NetScratch {
    pub fn for_net(net: &ConditionerNet) -> Self {
        Self {
            acts: net.layer_dims.iter().map(|&d| vec![0.0; d]).collect(),
            delta: Vec::new(),
            delta_next: Vec::new(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

/// Adam optimizer state. `lr` is mutated by the plateau scheduler between
/// epochs; everything else follows the standard update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!(
                "invalid Adam hyperparameters: lr={lr}, betas=({beta1}, {beta2})"
            )));
        }
        Ok(Self {
            step: 0,
            lr,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        })
    }
}

/// One Adam descent step on flat parameter/gradient slices.
pub fn adam_step_flat(
    mut state: AdamState,
    params: &[f64],
    grads: &[f64],
) -> Result<(Vec<f64>, AdamState)> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam state holds {} params, got {} params / {} grads",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        out.push(params[i] - state.lr * m_hat / (v_hat.sqrt() + state.epsilon));
    }
    Ok((out, state))
}

/// One Adam descent step on [`ParamVector`]s; layouts must agree.
pub fn adam_step(
    state: AdamState,
    params: &ParamVector,
    grads: &ParamVector,
) -> Result<(ParamVector, AdamState)> {
    if params.layout != grads.layout {
        return Err(Error::Shape("params and grads layouts differ".into()));
    }
    let layout = params.layout.clone();
    let (values, state) = adam_step_flat(state, &params.values, &grads.values)?;
    Ok((ParamVector { values, layout }, state))
}
