//! Two-headed dense policy/value network with an exact reverse pass.
//!
//! Layout: a rectifier trunk followed by a linear policy head (action
//! logits) and a linear value head (one scalar), both reading the last trunk
//! activation. Weights are stored row-major as `outputs x inputs`.
//!
//! The forward pass skips zero inputs, which makes the first layer cost
//! proportional to the number of active one-hot features rather than the
//! observation width.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{rng_for, stream};
use crate::{ActionId, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Dense {
        Dense { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `out[o] = b[o] + sum_i W[o, i] x[i]`, visiting only non-zero inputs.
    fn apply(&self, x: &[f64], nz: &mut Vec<usize>, out: &mut [f64]) {
        nz.clear();
        nz.extend(x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i));
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for &i in nz.iter() {
                acc += row[i] * x[i];
            }
            *y = acc;
        }
    }
}

/// Policy/value network. Layers are ordered trunk first, then the policy
/// head, then the value head.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    layers: Vec<Dense>,
    trunk_len: usize,
    version: u64,
}

impl PolicyNet {
    /// Orthogonal initialization: trunk gain sqrt(2), policy head 0.01,
    /// value head 1.0, zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], action_count: usize, seed: u64) -> PolicyNet {
        let mut rng = rng_for(seed, stream::INIT, 0);
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            layers.push(orthogonal(width, h, core::f64::consts::SQRT_2, &mut rng));
            width = h;
        }
        layers.push(orthogonal(width, action_count, 0.01, &mut rng));
        layers.push(orthogonal(width, 1, 1.0, &mut rng));
        PolicyNet { layers, trunk_len: hidden.len(), version: 0 }
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], action_count: usize) -> PolicyNet {
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            layers.push(Dense::zeros(width, h));
            width = h;
        }
        layers.push(Dense::zeros(width, action_count));
        layers.push(Dense::zeros(width, 1));
        PolicyNet { layers, trunk_len: hidden.len(), version: 0 }
    }

    /// Reassembles a network from its layers (trunk, policy head, value head).
    pub fn from_layers(layers: Vec<Dense>) -> Result<PolicyNet> {
        if layers.len() < 2 {
            return Err(Error::LengthMismatch(layers.len(), 2));
        }
        let trunk_len = layers.len() - 2;
        for l in &layers {
            if l.weight.len() != l.inputs * l.outputs {
                return Err(Error::DimensionMismatch { expected: l.inputs * l.outputs, got: l.weight.len() });
            }
            if l.bias.len() != l.outputs {
                return Err(Error::DimensionMismatch { expected: l.outputs, got: l.bias.len() });
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        for i in 1..=trunk_len {
            if layers[i].inputs != layers[i - 1].outputs {
                return Err(Error::DimensionMismatch { expected: layers[i - 1].outputs, got: layers[i].inputs });
            }
        }
        let head_in = layers[trunk_len].inputs;
        if layers[trunk_len + 1].inputs != head_in || layers[trunk_len + 1].outputs != 1 {
            return Err(Error::DimensionMismatch { expected: head_in, got: layers[trunk_len + 1].inputs });
        }
        Ok(PolicyNet { layers, trunk_len, version: 0 })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable layer access; invalidates outstanding traces.
    pub fn layer_mut(&mut self, i: usize) -> &mut Dense {
        self.version += 1;
        &mut self.layers[i]
    }

    pub fn trunk_len(&self) -> usize {
        self.trunk_len
    }

    pub fn policy_layer(&self) -> usize {
        self.trunk_len
    }

    pub fn value_layer(&self) -> usize {
        self.trunk_len + 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn action_count(&self) -> usize {
        self.layers[self.trunk_len].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// `theta += scale * delta`.
    pub fn apply_delta(&mut self, delta: &GradientSet, scale: f64) {
        self.version += 1;
        for (l, g) in self.layers.iter_mut().zip(&delta.layers) {
            l.weight.iter_mut().zip(&g.weight).for_each(|(w, d)| *w += scale * d);
            l.bias.iter_mut().zip(&g.bias).for_each(|(b, d)| *b += scale * d);
        }
    }

    /// Values of all parameters in layer order, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_param(&mut self, index: usize, value: f64) {
        self.version += 1;
        let mut i = index;
        for l in &mut self.layers {
            if i < l.weight.len() {
                l.weight[i] = value;
                return;
            }
            i -= l.weight.len();
            if i < l.bias.len() {
                l.bias[i] = value;
                return;
            }
            i -= l.bias.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn forward(&self, obs: &[f64], batch: usize) -> Result<ForwardTrace> {
        forward(self, obs, batch)
    }
}

fn orthogonal(inputs: usize, outputs: usize, gain: f64, rng: &mut crate::rng::Rng) -> Dense {
    let mut w: Vec<f64> = (0..inputs * outputs).map(|_| StandardNormal.sample(rng)).collect();
    // Orthonormalize the shorter side with modified Gram-Schmidt.
    if outputs <= inputs {
        gram_schmidt(&mut w, outputs, inputs, |m, r, c| r * m + c);
    } else {
        gram_schmidt(&mut w, inputs, outputs, |_, r, c| c * inputs + r);
    }
    w.iter_mut().for_each(|v| *v *= gain);
    // Keep the RNG stream position independent of the layer shape.
    let _ = rng.random::<u64>();
    Dense { inputs, outputs, weight: w, bias: vec![0.0; outputs] }
}

/// Orthonormalizes `count` vectors of length `len` stored in `w`; `at(len,
/// vector, component)` maps to the flat index.
fn gram_schmidt(w: &mut [f64], count: usize, len: usize, at: impl Fn(usize, usize, usize) -> usize) {
    for v in 0..count {
        for u in 0..v {
            let dot: f64 = (0..len).map(|c| w[at(len, v, c)] * w[at(len, u, c)]).sum();
            for c in 0..len {
                w[at(len, v, c)] -= dot * w[at(len, u, c)];
            }
        }
        let norm = libm::sqrt((0..len).map(|c| w[at(len, v, c)] * w[at(len, v, c)]).sum());
        if norm > 0.0 {
            for c in 0..len {
                w[at(len, v, c)] /= norm;
            }
        }
    }
}

/// Activations recorded by [`forward`], enough for an exact reverse pass and
/// for Kronecker factor statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub batch: usize,
    version: u64,
    /// Input to each trunk layer, then the shared head input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each trunk layer.
    pre: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub values: Vec<f64>,
    pub action_count: usize,
}

impl ForwardTrace {
    /// Input activations (without the bias coordinate) feeding layer `l`,
    /// `batch x inputs`. Both heads read the same activations.
    pub fn layer_input(&self, l: usize) -> &[f64] {
        &self.inputs[l.min(self.inputs.len() - 1)]
    }

    pub fn pre_activation(&self, l: usize) -> &[f64] {
        &self.pre[l]
    }

    pub fn logits_row(&self, b: usize) -> &[f64] {
        &self.logits[b * self.action_count..(b + 1) * self.action_count]
    }
}

/// Batched forward pass over `batch` rows of `obs`.
pub fn forward(net: &PolicyNet, obs: &[f64], batch: usize) -> Result<ForwardTrace> {
    let in_dim = net.input_dim();
    if obs.len() != batch * in_dim {
        return Err(Error::DimensionMismatch { expected: batch * in_dim, got: obs.len() });
    }
    let mut inputs = Vec::with_capacity(net.trunk_len + 1);
    let mut pre = Vec::with_capacity(net.trunk_len);
    let mut nz = Vec::new();
    let mut x = obs.to_vec();
    for l in &net.layers[..net.trunk_len] {
        let mut z = vec![0.0; batch * l.outputs];
        for b in 0..batch {
            l.apply(&x[b * l.inputs..(b + 1) * l.inputs], &mut nz, &mut z[b * l.outputs..(b + 1) * l.outputs]);
        }
        let h: Vec<f64> = z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        inputs.push(x);
        pre.push(z);
        x = h;
    }
    let a = net.action_count();
    let head = &net.layers[net.trunk_len];
    let value = &net.layers[net.trunk_len + 1];
    let mut logits = vec![0.0; batch * a];
    let mut values = vec![0.0; batch];
    for b in 0..batch {
        let row = &x[b * head.inputs..(b + 1) * head.inputs];
        head.apply(row, &mut nz, &mut logits[b * a..(b + 1) * a]);
        value.apply(row, &mut nz, &mut values[b..b + 1]);
    }
    inputs.push(x);
    Ok(ForwardTrace { batch, version: net.version, inputs, pre, logits, values, action_count: a })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// One gradient tensor pair per network layer, same shapes as the net.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(net: &PolicyNet) -> GradientSet {
        GradientSet {
            layers: net.layers.iter().map(|l| LayerGrad { weight: vec![0.0; l.weight.len()], bias: vec![0.0; l.bias.len()] }).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += scale * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= c);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn dot(&self, other: &GradientSet) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Output of [`backward`]: parameter gradients plus, per layer, the gradient
/// with respect to that layer's pre-activation (`batch x outputs`).
#[derive(Clone, Debug)]
pub struct Backprop {
    pub grads: GradientSet,
    pub preact: Vec<Vec<f64>>,
}

/// Exact reverse pass for upstream gradients on the logits
/// (`batch x actions`) and the values (`batch`).
pub fn backward(net: &PolicyNet, trace: &ForwardTrace, logit_grads: &[f64], value_grads: &[f64]) -> Result<Backprop> {
    if trace.version != net.version {
        return Err(Error::StaleTrace);
    }
    let batch = trace.batch;
    let a = net.action_count();
    if logit_grads.len() != batch * a {
        return Err(Error::DimensionMismatch { expected: batch * a, got: logit_grads.len() });
    }
    if value_grads.len() != batch {
        return Err(Error::DimensionMismatch { expected: batch, got: value_grads.len() });
    }
    let mut grads = GradientSet::zeros_like(net);
    let mut preact: Vec<Vec<f64>> = vec![Vec::new(); net.layers.len()];
    let tl = net.trunk_len;
    let head_in = trace.layer_input(tl);
    let width = net.layers[tl].inputs;

    // Heads: accumulate parameter grads and the gradient w.r.t. their input.
    let mut dh = vec![0.0; batch * width];
    for (li, delta, outs) in [(tl, logit_grads, a), (tl + 1, value_grads, 1)] {
        let layer = &net.layers[li];
        let g = &mut grads.layers[li];
        for b in 0..batch {
            let x = &head_in[b * width..(b + 1) * width];
            let d = &delta[b * outs..(b + 1) * outs];
            let dx = &mut dh[b * width..(b + 1) * width];
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                g.bias[o] += dv;
                let gw = &mut g.weight[o * width..(o + 1) * width];
                let w = &layer.weight[o * width..(o + 1) * width];
                for i in 0..width {
                    gw[i] += dv * x[i];
                    dx[i] += dv * w[i];
                }
            }
        }
        preact[li] = delta.to_vec();
    }

    // Trunk, last layer first.
    let mut upstream = dh;
    for li in (0..tl).rev() {
        let layer = &net.layers[li];
        let z = &trace.pre[li];
        let delta: Vec<f64> = upstream.iter().zip(z).map(|(&g, &zv)| if zv > 0.0 { g } else { 0.0 }).collect();
        let x = &trace.inputs[li];
        let (n_in, n_out) = (layer.inputs, layer.outputs);
        let g = &mut grads.layers[li];
        let mut dx = if li > 0 { vec![0.0; batch * n_in] } else { Vec::new() };
        let mut nz = Vec::new();
        for b in 0..batch {
            let xb = &x[b * n_in..(b + 1) * n_in];
            nz.clear();
            nz.extend(xb.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i));
            for o in 0..n_out {
                let dv = delta[b * n_out + o];
                if dv == 0.0 {
                    continue;
                }
                g.bias[o] += dv;
                let gw = &mut g.weight[o * n_in..(o + 1) * n_in];
                for &i in &nz {
                    gw[i] += dv * xb[i];
                }
                if li > 0 {
                    let w = &layer.weight[o * n_in..(o + 1) * n_in];
                    let dxb = &mut dx[b * n_in..(b + 1) * n_in];
                    for i in 0..n_in {
                        dxb[i] += dv * w[i];
                    }
                }
            }
        }
        preact[li] = delta;
        upstream = dx;
    }
    Ok(Backprop { grads, preact })
}

/// Softmax with max subtraction.
pub fn action_distribution(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |m, &v| if v > m { v } else { m });
    let e: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Log-softmax with max subtraction.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |m, &v| if v > m { v } else { m });
    let lse = m + libm::log(logits.iter().map(|&z| libm::exp(z - m)).sum::<f64>());
    logits.iter().map(|&z| z - lse).collect()
}

pub fn entropy(logits: &[f64]) -> f64 {
    let lp = log_softmax(logits);
    -lp.iter().map(|&l| libm::exp(l) * l).sum::<f64>()
}

/// Per-row log-probability of the taken action and policy entropy.
pub fn log_prob_and_entropy(logits: &[f64], action_count: usize, actions: &[ActionId]) -> Result<(Vec<f64>, Vec<f64>)> {
    if logits.len() != actions.len() * action_count {
        return Err(Error::DimensionMismatch { expected: actions.len() * action_count, got: logits.len() });
    }
    let mut lps = Vec::with_capacity(actions.len());
    let mut hs = Vec::with_capacity(actions.len());
    for (row, &a) in logits.chunks(action_count).zip(actions) {
        if a >= action_count {
            return Err(Error::ActionOutOfRange { action: a, count: action_count });
        }
        let lp = log_softmax(row);
        lps.push(lp[a]);
        hs.push(-lp.iter().map(|&l| libm::exp(l) * l).sum::<f64>());
    }
    Ok((lps, hs))
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(row: &[f64]) -> ActionId {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Draws from the categorical distribution given by `probs`.
pub fn sample_categorical(probs: &[f64], rng: &mut crate::rng::Rng) -> ActionId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
