//! Kronecker-factored natural gradient with factored damping and a KL
//! trust region.
//!
//! Each dense layer keeps two running second-moment factors: `A` over the
//! layer input with a trailing homogeneous coordinate for the bias, and `S`
//! over the pre-activation gradients of log-likelihoods of actions sampled
//! from the model. The Fisher block of the layer is approximated by
//! `A (x) S` and the weight gradient `G = [dW | db]` is preconditioned as
//! `(S + c_s I)^-1 G (A + c_a I)^-1`.
//!
//! Input coordinates that have never been active have an all-zero row and
//! column in `A`. They are split off before the eigendecomposition, which is
//! exact and keeps the solve proportional to the visited part of one-hot
//! observations.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::policy::{ForwardTrace, GradientSet, PolicyNet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KfacConfig {
    pub ema_decay: f64,
    pub damping: f64,
    /// Eigendecompositions are recomputed every this many factor updates.
    pub refresh_interval: u64,
}

impl Default for KfacConfig {
    fn default() -> Self {
        KfacConfig { ema_decay: 0.95, damping: 0.01, refresh_interval: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrustRegionConfig {
    pub delta_kl: f64,
    pub max_lr: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        TrustRegionConfig { delta_kl: 0.002, max_lr: 0.25 }
    }
}

/// Dense symmetric matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> SymMatrix {
        SymMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> SymMatrix {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Indices whose diagonal entry is non-zero.
    fn active(&self) -> Vec<usize> {
        (0..self.dim).filter(|&i| self.get(i, i) != 0.0).collect()
    }

    fn submatrix(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.get(idx[r], idx[c]))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Eigen {
    active: Vec<usize>,
    vectors: DMatrix<f64>,
    values: Vec<f64>,
}

impl Eigen {
    fn of(m: &SymMatrix) -> Eigen {
        let active = m.active();
        if active.is_empty() {
            return Eigen { active, vectors: DMatrix::zeros(0, 0), values: Vec::new() };
        }
        let eig = SymmetricEigen::new(m.submatrix(&active));
        let values = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        Eigen { active, vectors: eig.eigenvectors, values }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Cache {
    a: Eigen,
    s: Eigen,
    damp_a: f64,
    damp_s: f64,
}

/// Factor pair of one dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerFactors {
    pub a: SymMatrix,
    pub s: SymMatrix,
    /// The value head keeps `S = [1]`.
    pub fixed_s: bool,
    cache: Option<Cache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FisherState {
    pub layers: Vec<LayerFactors>,
    pub config: KfacConfig,
    pub update_count: u64,
    refreshed_at: u64,
    scratch: Vec<f64>,
}

impl FisherState {
    pub fn new(net: &PolicyNet, config: KfacConfig) -> FisherState {
        let value_layer = net.value_layer();
        let layers = net
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let fixed_s = i == value_layer;
                LayerFactors {
                    a: SymMatrix::zeros(l.inputs + 1),
                    s: if fixed_s { SymMatrix::identity(1) } else { SymMatrix::zeros(l.outputs) },
                    fixed_s,
                    cache: None,
                }
            })
            .collect();
        FisherState { layers, config, update_count: 0, refreshed_at: 0, scratch: Vec::new() }
    }

    /// Builds a state from explicit factors, marked as updated once.
    pub fn from_factors(factors: Vec<(SymMatrix, SymMatrix, bool)>, config: KfacConfig, update_count: u64) -> FisherState {
        let layers = factors.into_iter().map(|(a, s, fixed_s)| LayerFactors { a, s, fixed_s, cache: None }).collect();
        FisherState { layers, config, update_count, refreshed_at: 0, scratch: Vec::new() }
    }

    /// Folds one batch of statistics into the running factors.
    /// `preact_grads[l]` holds per-sample gradients of the sampled-action
    /// log-likelihood w.r.t. layer `l`'s pre-activation (`batch x outputs`).
    pub fn update_factors(&mut self, trace: &ForwardTrace, preact_grads: &[Vec<f64>]) -> Result<()> {
        if preact_grads.len() != self.layers.len() {
            return Err(Error::LengthMismatch(preact_grads.len(), self.layers.len()));
        }
        let batch = trace.batch;
        let first = self.update_count == 0;
        let rho = self.config.ema_decay;
        let mut nz = Vec::new();
        for (l, f) in self.layers.iter_mut().enumerate() {
            let x = trace.layer_input(l);
            let dim = f.a.dim;
            if x.len() != batch * (dim - 1) {
                return Err(Error::DimensionMismatch { expected: batch * (dim - 1), got: x.len() });
            }
            self.scratch.clear();
            self.scratch.resize(dim * dim, 0.0);
            let m = &mut self.scratch;
            for b in 0..batch {
                let row = &x[b * (dim - 1)..(b + 1) * (dim - 1)];
                nz.clear();
                nz.extend(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)));
                nz.push((dim - 1, 1.0));
                for &(i, vi) in &nz {
                    for &(j, vj) in &nz {
                        m[i * dim + j] += vi * vj;
                    }
                }
            }
            ema(&mut f.a.data, m, batch, rho, first);

            if !f.fixed_s {
                let g = &preact_grads[l];
                let sd = f.s.dim;
                if g.len() != batch * sd {
                    return Err(Error::DimensionMismatch { expected: batch * sd, got: g.len() });
                }
                let mut sm = vec![0.0; sd * sd];
                for b in 0..batch {
                    let row = &g[b * sd..(b + 1) * sd];
                    for i in 0..sd {
                        if row[i] == 0.0 {
                            continue;
                        }
                        for j in 0..sd {
                            sm[i * sd + j] += row[i] * row[j];
                        }
                    }
                }
                ema(&mut f.s.data, &sm, batch, rho, first);
            }
        }
        self.update_count += 1;
        Ok(())
    }

    fn refresh_if_due(&mut self) -> Result<()> {
        let due = self.layers.iter().any(|f| f.cache.is_none())
            || self.update_count.saturating_sub(self.refreshed_at) >= self.config.refresh_interval;
        if !due {
            return Ok(());
        }
        let sqrt_damp = libm::sqrt(self.config.damping);
        for f in &mut self.layers {
            if f.a.data.iter().chain(&f.s.data).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("fisher factors"));
            }
            let pi = damping_ratio(&f.a, &f.s);
            f.cache = Some(Cache { a: Eigen::of(&f.a), s: Eigen::of(&f.s), damp_a: pi * sqrt_damp, damp_s: sqrt_damp / pi });
        }
        self.refreshed_at = self.update_count;
        Ok(())
    }

    /// Drops cached eigendecompositions so the next solve uses current factors.
    pub fn invalidate(&mut self) {
        for f in &mut self.layers {
            f.cache = None;
        }
    }

    /// Natural-gradient direction for `grads`.
    pub fn precondition(&mut self, grads: &GradientSet) -> Result<GradientSet> {
        if self.update_count == 0 {
            return Err(Error::FactorsUninitialized);
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::LengthMismatch(grads.layers.len(), self.layers.len()));
        }
        self.refresh_if_due()?;
        let mut out = grads.clone();
        for (f, g) in self.layers.iter().zip(out.layers.iter_mut()) {
            let cache = f.cache.as_ref().expect("refreshed");
            let rows = f.s.dim;
            let cols = f.a.dim;
            let mut m = DMatrix::from_fn(rows, cols, |r, c| if c + 1 == cols { g.bias[r] } else { g.weight[r * (cols - 1) + c] });
            m = solve_right(m, &cache.a, cache.damp_a);
            m = solve_right(m.transpose(), &cache.s, cache.damp_s).transpose();
            for r in 0..rows {
                for c in 0..cols - 1 {
                    g.weight[r * (cols - 1) + c] = m[(r, c)];
                }
                g.bias[r] = m[(r, cols - 1)];
            }
        }
        Ok(out)
    }

    /// Damped factors `(A + c_a I, S + c_s I)` of layer `l` as used by the
    /// most recent solve.
    pub fn damped_factors(&mut self, l: usize) -> Result<(SymMatrix, SymMatrix)> {
        self.refresh_if_due()?;
        let f = &self.layers[l];
        let cache = f.cache.as_ref().expect("refreshed");
        let mut a = f.a.clone();
        for i in 0..a.dim {
            a.data[i * a.dim + i] += cache.damp_a;
        }
        let mut s = f.s.clone();
        for i in 0..s.dim {
            s.data[i * s.dim + i] += cache.damp_s;
        }
        Ok((a, s))
    }

    pub fn damping_terms(&mut self, l: usize) -> Result<(f64, f64)> {
        self.refresh_if_due()?;
        let c = self.layers[l].cache.as_ref().expect("refreshed");
        Ok((c.damp_a, c.damp_s))
    }

    /// `sum_l vec(D_l)^T (A_l (x) S_l) vec(D_l)`: the quadratic KL proxy of a
    /// unit-rate step along `nat`, using undamped factors.
    pub fn quadratic_form(&self, nat: &GradientSet) -> f64 {
        let mut q = 0.0;
        for (f, g) in self.layers.iter().zip(&nat.layers) {
            let act = f.a.active();
            if act.is_empty() {
                continue;
            }
            let rows = f.s.dim;
            let cols = f.a.dim;
            let d = DMatrix::from_fn(rows, act.len(), |r, k| {
                let c = act[k];
                if c + 1 == cols {
                    g.bias[r]
                } else {
                    g.weight[r * (cols - 1) + c]
                }
            });
            let s = DMatrix::from_row_slice(rows, rows, &f.s.data);
            let a = f.a.submatrix(&act);
            let sda = &s * &d * &a;
            q += sda.component_mul(&d).sum();
        }
        q
    }
}

fn ema(target: &mut [f64], batch_sum: &[f64], batch: usize, rho: f64, first: bool) {
    let inv = 1.0 / batch as f64;
    if first {
        for (t, &m) in target.iter_mut().zip(batch_sum) {
            *t = m * inv;
        }
    } else {
        for (t, &m) in target.iter_mut().zip(batch_sum) {
            *t = rho * *t + (1.0 - rho) * (m * inv);
        }
    }
}

/// `pi = sqrt((tr A / dim A) / (tr S / dim S))`, 1 when either trace is 0.
pub fn damping_ratio(a: &SymMatrix, s: &SymMatrix) -> f64 {
    let ta = a.trace() / a.dim as f64;
    let ts = s.trace() / s.dim as f64;
    if ta > 0.0 && ts > 0.0 {
        libm::sqrt(ta / ts)
    } else {
        1.0
    }
}

/// `m (F + c I)^-1` from the eigendecomposition of `F`. Inactive
/// coordinates of `F` are zero, so they are divided by `c` alone; with
/// `c = 0` they map to zero (pseudo-inverse).
fn solve_right(m: DMatrix<f64>, eig: &Eigen, c: f64) -> DMatrix<f64> {
    let rows = m.nrows();
    let mut out = m.clone();
    let inv_c = if c > 0.0 { 1.0 / c } else { 0.0 };
    out.iter_mut().for_each(|v| *v *= inv_c);
    if eig.active.is_empty() {
        return out;
    }
    let sub = DMatrix::from_fn(rows, eig.active.len(), |r, k| m[(r, eig.active[k])]);
    let mut y = sub * &eig.vectors;
    for (k, &lam) in eig.values.iter().enumerate() {
        let d = lam + c;
        let s = if d > 0.0 { 1.0 / d } else { 0.0 };
        y.column_mut(k).iter_mut().for_each(|v| *v *= s);
    }
    let z = y * eig.vectors.transpose();
    for (k, &col) in eig.active.iter().enumerate() {
        for r in 0..rows {
            out[(r, col)] = z[(r, k)];
        }
    }
    out
}

/// Scales the step by `eta = min(max_lr, base_lr, sqrt(2 delta / q))`,
/// applies `theta -= eta * nat`, and returns `eta`.
pub fn trust_region_step(net: &mut PolicyNet, nat: &GradientSet, fisher: &FisherState, tr: &TrustRegionConfig, base_lr: f64) -> Result<f64> {
    let q = fisher.quadratic_form(nat);
    let eta = step_size(q, tr, base_lr)?;
    if nat.max_abs() == 0.0 {
        return Ok(eta);
    }
    net.apply_delta(nat, -eta);
    Ok(eta)
}

pub fn step_size(q: f64, tr: &TrustRegionConfig, base_lr: f64) -> Result<f64> {
    if !q.is_finite() {
        return Err(Error::NonFinite("trust region quadratic"));
    }
    let mut eta = tr.max_lr.min(base_lr);
    if q > 0.0 {
        eta = eta.min(libm::sqrt(2.0 * tr.delta_kl / q));
    }
    Ok(eta)
}
