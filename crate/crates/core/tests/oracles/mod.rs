//! Independent reference computations shared by the core integration tests
//! and the acceptance runner. Nothing here calls the code paths it checks
//! except to obtain the value under test.

#![allow(dead_code)]

use std::sync::Arc;

use eaktr_core::env::{layouts, VecEnv};
use eaktr_core::expert::{generate_dataset, AdvantageVariant};
use eaktr_core::kfac::{trust_region_step, FisherState, KfacConfig, SymMatrix};
use eaktr_core::policy::{GradientSet, LayerGrad, PolicyNet};
use eaktr_core::rng::{rng_for, stream};
use eaktr_core::rollout::{collect, compute_returns, RolloutBatch};
use eaktr_core::trainer::{a2c_gradient, combined_gradient, combined_loss, expert_advantages, update_fisher, ExpertBatch, TrainConfig, Trainer, UpdateRngs};

/// SplitMix64; kept local so the oracles share no randomness code with the
/// crate under test.
pub struct Gen(u64);

impl Gen {
    pub fn new(seed: u64) -> Gen {
        Gen(seed ^ 0x9e37_79b9_7f4a_7c15)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

// ---------------------------------------------------------------------------
// Finite-difference certification of the combined loss gradient.

#[derive(Clone, Copy, Debug, Default)]
pub struct FdReport {
    pub instances: usize,
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Relative error with a denominator floor of `1e-6`, far below any
/// gradient entry that carries signal in these instances.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_instance(g: &mut Gen, variant: AdvantageVariant) -> (PolicyNet, RolloutBatch, ExpertBatch, TrainConfig) {
    let obs_dim = 2 + g.below(4);
    let actions = 2 + g.below(3);
    let hidden: Vec<usize> = (0..1 + g.below(2)).map(|_| 2 + g.below(4)).collect();
    let mut net = PolicyNet::new(obs_dim, &hidden, actions, g.next_u64());
    // Random biases so no ReLU sits near its kink and heads are not uniform.
    for l in 0..net.layers().len() {
        let layer = net.layer_mut(l);
        for b in layer.bias.iter_mut() {
            *b = g.range(-0.5, 0.5);
        }
    }
    let (n_actors, horizon) = (1 + g.below(3), 1 + g.below(4));
    let n = n_actors * horizon;
    let obs = |g: &mut Gen, k: usize| (0..k * obs_dim).map(|_| g.range(-1.0, 1.0)).collect::<Vec<_>>();
    let batch = RolloutBatch {
        n_actors,
        horizon,
        obs_dim,
        observations: obs(g, n),
        actions: (0..n).map(|_| g.below(actions)).collect(),
        rewards: vec![0.0; n],
        dones: vec![false; n],
        values: vec![0.0; n],
        bootstrap_values: vec![0.0; n_actors],
        returns: (0..n).map(|_| g.range(-2.0, 2.0)).collect(),
        advantages: (0..n).map(|_| g.range(-2.0, 2.0)).collect(),
        completed: Vec::new(),
    };
    let k = 1 + g.below(6);
    let eb = ExpertBatch {
        observations: obs(g, k),
        actions: (0..k).map(|_| g.below(actions)).collect(),
        reward_to_go: (0..k).map(|_| g.range(-1.0, 3.0)).collect(),
    };
    let cfg = TrainConfig { lambda_expert: g.range(0.1, 2.0), beta_entropy: g.range(0.0, 0.1), advantage: variant, ..TrainConfig::default() };
    (net, batch, eb, cfg)
}

/// Central differences of the combined scalar loss against the analytic
/// gradient, every parameter of `instances` random nets per variant.
/// Expert advantages are evaluated once at the base point and held fixed,
/// as in the loss definition.
pub fn gradient_certification(instances: usize, seed: u64) -> FdReport {
    let mut g = Gen::new(seed);
    let mut rep = FdReport::default();
    for variant in AdvantageVariant::ALL {
        for _ in 0..instances {
            let (net, batch, eb, cfg) = random_instance(&mut g, variant);
            let adv = expert_advantages(&net, &eb, variant).unwrap();
            let (grad, _, _, _) = combined_gradient(&net, &batch, Some(&eb), &cfg).unwrap();
            let flat = grad.flat();
            let p0 = net.flat_params();
            let loss = |n: &PolicyNet| combined_loss(n, &batch, Some((&eb, &adv)), &cfg).unwrap();
            for i in 0..p0.len() {
                let h = 1e-5;
                let mut up = net.clone();
                up.set_flat_param(i, p0[i] + h);
                let mut dn = net.clone();
                dn.set_flat_param(i, p0[i] - h);
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                rep.max_rel_err = rep.max_rel_err.max(rel_err(fd, flat[i]));
                rep.checked += 1;
            }
            rep.instances += 1;
        }
    }
    rep
}

// ---------------------------------------------------------------------------
// Reduction to plain ACKTR.

/// Plain ACKTR written out from the public building blocks: no expert
/// dataset, no expert sampling, A2C gradient only.
pub fn plain_acktr(cfg: &TrainConfig, updates: usize) -> PolicyNet {
    let spec = Arc::new(layouts::tiny_maze().with_curriculum(cfg.curriculum));
    let mut net = PolicyNet::new(spec.obs_dim(), &cfg.hidden(), spec.action_count(), cfg.seed);
    let mut fisher = FisherState::new(&net, cfg.kfac);
    let mut envs = VecEnv::new(spec, cfg.n_actors, cfg.seed);
    let mut actions = rng_for(cfg.seed, stream::ACTIONS, 0);
    let mut fisher_rng = UpdateRngs::new(cfg.seed).fisher;
    for _ in 0..updates {
        let batch = collect(&net, &mut envs, cfg.horizon, cfg.gamma, &mut actions).unwrap();
        let (g, _, trace) = a2c_gradient(&net, &batch, cfg.beta_entropy).unwrap();
        update_fisher(&net, &mut fisher, &trace, &mut fisher_rng).unwrap();
        let nat = fisher.precondition(&g).unwrap();
        trust_region_step(&mut net, &nat, &fisher, &cfg.trust, cfg.base_lr).unwrap();
    }
    net
}

pub fn reduction_config() -> TrainConfig {
    TrainConfig {
        env_id: layouts::TINY_MAZE_ID.into(),
        lambda_expert: 0.0,
        n_actors: 4,
        horizon: 5,
        hidden_units: 16,
        total_env_steps: 1 << 40,
        seed: 17,
        ..TrainConfig::default()
    }
}

/// Parameters after `updates` trainer updates with `lambda_expert = 0` and
/// an expert dataset attached, next to the plain path.
pub fn reduction(updates: usize) -> (Vec<f64>, Vec<f64>) {
    let cfg = reduction_config();
    let spec = layouts::tiny_maze();
    let ds = generate_dataset(&spec, 2, 0.2, 1, cfg.gamma).unwrap();
    let mut t = Trainer::new(cfg.clone(), &spec, Some(ds)).unwrap();
    for _ in 0..updates {
        t.update().unwrap();
    }
    (t.net.flat_params(), plain_acktr(&cfg, updates).flat_params())
}

// ---------------------------------------------------------------------------
// Dense linear algebra for the K-FAC oracle.

pub type Dense = Vec<Vec<f64>>;

pub fn sym_to_dense(m: &SymMatrix) -> Dense {
    (0..m.dim).map(|i| (0..m.dim).map(|j| m.get(i, j)).collect()).collect()
}

/// Lower Cholesky factor, or `None` when the matrix is not positive definite.
pub fn cholesky(m: &Dense) -> Option<Dense> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = m[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

pub fn cholesky_solve(l: &Dense, b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

/// `A (x) S` for column-stacked `vec(G)` with `G` of shape `dim S x dim A`.
pub fn kron(a: &Dense, s: &Dense) -> Dense {
    let (na, ns) = (a.len(), s.len());
    let n = na * ns;
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            k[i][j] = a[i / ns][j / ns] * s[i % ns][j % ns];
        }
    }
    k
}

pub fn matvec(m: &Dense, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Column-stacked `[dW | db]` of one layer with `rows` outputs.
pub fn vec_layer(g: &LayerGrad, rows: usize) -> Vec<f64> {
    let cols = g.weight.len() / rows + 1;
    (0..cols).flat_map(|c| (0..rows).map(move |r| (r, c))).map(|(r, c)| if c + 1 == cols { g.bias[r] } else { g.weight[r * (cols - 1) + c] }).collect()
}

fn add_diag(m: &Dense, c: f64) -> Dense {
    let mut out = m.clone();
    for (i, row) in out.iter_mut().enumerate() {
        row[i] += c;
    }
    out
}

#[derive(Clone, Copy, Debug, Default)]
pub struct KfacReport {
    pub layers: usize,
    /// Preconditioned gradient vs. dense Kronecker solve, relative 2-norm.
    pub max_solve_err: f64,
    /// Damping terms vs. the trace-ratio formula, relative.
    pub max_damping_err: f64,
    /// Largest shift needed to make a damped factor pass Cholesky; zero when
    /// the factor already does.
    pub max_psd_shift: f64,
    /// `||F d - g|| / ||g||` for the step `d`: the gradient of the matched
    /// quadratic `g.d - 1/2 d.F d` at the proposed minimizer.
    pub max_quadratic_residual: f64,
    /// Step size vs. `min(max_lr, base_lr, sqrt(2 delta / q))`, relative.
    pub max_eta_err: f64,
}

fn psd_shift(m: &Dense) -> f64 {
    for shift in [0.0, 1e-14, 1e-12, 1e-10, 1e-8, 1e-6] {
        if cholesky(&add_diag(m, shift)).is_some() {
            return shift;
        }
    }
    f64::INFINITY
}

/// Random net with every layer at most 8x8 (bias column included), real
/// factors accumulated from a few random batches, then every layer checked
/// against an explicit Kronecker solve.
pub fn kfac_oracle(trials: usize, seed: u64) -> KfacReport {
    let mut g = Gen::new(seed);
    let mut rep = KfacReport::default();
    for _ in 0..trials {
        let obs_dim = 2 + g.below(6);
        let hidden: Vec<usize> = (0..1 + g.below(2)).map(|_| 2 + g.below(6)).collect();
        let actions = 2 + g.below(5);
        let net = PolicyNet::new(obs_dim, &hidden, actions, g.next_u64());
        let config = KfacConfig { ema_decay: g.range(0.5, 0.99), damping: 10f64.powf(g.range(-4.0, -1.0)), refresh_interval: 10 };
        let mut fisher = FisherState::new(&net, config);
        let mut rng = rng_for(g.next_u64(), stream::FISHER, 0);
        for _ in 0..1 + g.below(3) {
            let batch = 3 + g.below(10);
            let obs: Vec<f64> = (0..batch * obs_dim).map(|_| g.range(-1.0, 1.0)).collect();
            let trace = net.forward(&obs, batch).unwrap();
            update_fisher(&net, &mut fisher, &trace, &mut rng).unwrap();
        }
        let grads = GradientSet {
            layers: net.layers().iter().map(|l| LayerGrad { weight: (0..l.weight.len()).map(|_| g.range(-1.0, 1.0)).collect(), bias: (0..l.bias.len()).map(|_| g.range(-1.0, 1.0)).collect() }).collect(),
        };
        let nat = fisher.precondition(&grads).unwrap();
        let mut q_oracle = 0.0;
        for l in 0..net.layers().len() {
            let f = &fisher.layers[l];
            let (a, s) = (sym_to_dense(&f.a), sym_to_dense(&f.s));
            assert!(a.len() <= 8 && s.len() <= 8, "layer {l} is {}x{}", s.len(), a.len());
            let ta = f.a.trace() / f.a.dim as f64;
            let ts = f.s.trace() / f.s.dim as f64;
            let pi = if ta > 0.0 && ts > 0.0 { (ta / ts).sqrt() } else { 1.0 };
            let (ca, cs) = (pi * config.damping.sqrt(), config.damping.sqrt() / pi);
            let (ia, is) = fisher.damping_terms(l).unwrap();
            rep.max_damping_err = rep.max_damping_err.max(rel_err(ia, ca)).max(rel_err(is, cs));
            let (da, ds) = fisher.damped_factors(l).unwrap();
            rep.max_psd_shift = rep.max_psd_shift.max(psd_shift(&sym_to_dense(&da))).max(psd_shift(&sym_to_dense(&ds)));

            let f_damped = kron(&add_diag(&a, ca), &add_diag(&s, cs));
            let rows = s.len();
            let gv = vec_layer(&grads.layers[l], rows);
            let chol = cholesky(&f_damped).expect("damped Kronecker product is positive definite");
            let want = cholesky_solve(&chol, &gv);
            let got = vec_layer(&nat.layers[l], rows);
            let diff: Vec<f64> = got.iter().zip(&want).map(|(x, y)| x - y).collect();
            rep.max_solve_err = rep.max_solve_err.max(norm(&diff) / norm(&want));
            let fd = matvec(&f_damped, &got);
            let res: Vec<f64> = fd.iter().zip(&gv).map(|(x, y)| x - y).collect();
            rep.max_quadratic_residual = rep.max_quadratic_residual.max(norm(&res) / norm(&gv));
            let undamped = matvec(&kron(&a, &s), &got);
            q_oracle += got.iter().zip(&undamped).map(|(x, y)| x * y).sum::<f64>();
            rep.layers += 1;
        }
        let tr = eaktr_core::kfac::TrustRegionConfig { delta_kl: 10f64.powf(g.range(-4.0, -1.0)), max_lr: g.range(0.05, 1.0) };
        let base_lr = g.range(0.05, 1.0);
        let mut stepped = net.clone();
        let eta = trust_region_step(&mut stepped, &nat, &fisher, &tr, base_lr).unwrap();
        let want_eta = tr.max_lr.min(base_lr).min((2.0 * tr.delta_kl / q_oracle).sqrt());
        rep.max_eta_err = rep.max_eta_err.max(rel_err(eta, want_eta));
    }
    rep
}

fn random_spd(g: &mut Gen, n: usize) -> SymMatrix {
    let b: Vec<f64> = (0..n * n).map(|_| g.range(-1.0, 1.0)).collect();
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            m.data[i * n + j] = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum::<f64>() + if i == j { 0.05 } else { 0.0 };
        }
    }
    m
}

fn unvec_layer(v: &[f64], rows: usize, cols: usize) -> LayerGrad {
    let mut g = LayerGrad { weight: vec![0.0; rows * (cols - 1)], bias: vec![0.0; rows] };
    for c in 0..cols {
        for r in 0..rows {
            let x = v[c * rows + r];
            if c + 1 == cols {
                g.bias[r] = x;
            } else {
                g.weight[r * (cols - 1) + c] = x;
            }
        }
    }
    g
}

/// Largest relative distance to the optimum after one undamped unit step on
/// `1/2 (w - w*)^T (A (x) S) (w - w*)` with the true factors supplied.
pub fn quadratic_one_step(trials: usize, seed: u64) -> f64 {
    let mut g = Gen::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (cols, rows) = (2 + g.below(7), 1 + g.below(8));
        let (a, s) = (random_spd(&mut g, cols), random_spd(&mut g, rows));
        let f = kron(&sym_to_dense(&a), &sym_to_dense(&s));
        let n = rows * cols;
        let opt: Vec<f64> = (0..n).map(|_| g.range(-2.0, 2.0)).collect();
        let w0: Vec<f64> = (0..n).map(|_| g.range(-2.0, 2.0)).collect();
        let diff: Vec<f64> = w0.iter().zip(&opt).map(|(x, y)| x - y).collect();
        let grad = matvec(&f, &diff);
        let config = KfacConfig { ema_decay: 0.95, damping: 0.0, refresh_interval: 10 };
        let mut fisher = FisherState::from_factors(vec![(a, s, false)], config, 1);
        let nat = fisher.precondition(&GradientSet { layers: vec![unvec_layer(&grad, rows, cols)] }).unwrap();
        let step = vec_layer(&nat.layers[0], rows);
        let w1: Vec<f64> = w0.iter().zip(&step).map(|(x, d)| x - d).collect();
        let err: Vec<f64> = w1.iter().zip(&opt).map(|(x, y)| x - y).collect();
        worst = worst.max(norm(&err) / norm(&diff));
    }
    worst
}

// ---------------------------------------------------------------------------
// Returns.

/// `R_t = sum_{k=t}^{e} gamma^(k-t) r_k`, with `e` the first terminal at or
/// after `t`, plus `gamma^(T-t) V` when no terminal occurs in the window.
pub fn forward_sum_returns(rewards: &[f64], dones: &[bool], bootstrap: &[f64], gamma: f64, horizon: usize) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    for (actor, &v) in bootstrap.iter().enumerate() {
        for t in 0..horizon {
            let mut sum = 0.0;
            let mut terminal = false;
            for k in t..horizon {
                sum += gamma.powi((k - t) as i32) * rewards[actor * horizon + k];
                if dones[actor * horizon + k] {
                    terminal = true;
                    break;
                }
            }
            if !terminal {
                sum += gamma.powi((horizon - t) as i32) * v;
            }
            out[actor * horizon + t] = sum;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReturnsReport {
    pub instances: usize,
    pub with_mid_terminal: usize,
    pub max_abs_err: f64,
}

pub fn returns_oracle(instances: usize, seed: u64) -> ReturnsReport {
    let mut g = Gen::new(seed);
    let mut rep = ReturnsReport::default();
    for _ in 0..instances {
        let n = 1 + g.below(4);
        let horizon = 1 + g.below(20);
        let gamma = if g.below(10) == 0 { 0.0 } else { g.range(0.0, 1.0) };
        let p_done = g.range(0.0, 0.4);
        let rewards: Vec<f64> = (0..n * horizon).map(|_| if g.below(3) == 0 { 0.0 } else { g.range(-1.0, 1.0) }).collect();
        let dones: Vec<bool> = (0..n * horizon).map(|_| g.unit() < p_done).collect();
        let bootstrap: Vec<f64> = (0..n).map(|_| g.range(-5.0, 5.0)).collect();
        let got = compute_returns(&rewards, &dones, &bootstrap, gamma, horizon).unwrap();
        let want = forward_sum_returns(&rewards, &dones, &bootstrap, gamma, horizon);
        for (x, y) in got.iter().zip(&want) {
            rep.max_abs_err = rep.max_abs_err.max((x - y).abs());
        }
        if (0..n).any(|a| (0..horizon - 1).any(|t| dones[a * horizon + t])) {
            rep.with_mid_terminal += 1;
        }
        rep.instances += 1;
    }
    rep
}
