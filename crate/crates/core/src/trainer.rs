//! The expert-augmented ACKTR update and the in-memory training loop.
//!
//! One update collects `n_actors x horizon` transitions, forms the A2C
//! gradient, adds `lambda_expert` times the gradient of the expert
//! log-likelihood term on a sampled expert minibatch, refreshes the Fisher
//! factors from the rollout states with model-sampled actions, and takes a
//! trust-region-scaled natural-gradient step.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::env::{EnvSpec, VecEnv};
use crate::expert::{expert_accuracy, expert_advantage, sample_batch, AdvantageVariant, ExpertDataset};
use crate::kfac::{trust_region_step, FisherState, KfacConfig, TrustRegionConfig};
use crate::policy::{action_distribution, backward, log_softmax, sample_categorical, ForwardTrace, GradientSet, PolicyNet};
use crate::rng::{rng_for, stream, Rng};
use crate::rollout::{collect, RolloutBatch};
use crate::{ActionId, Error, Result};

/// Every knob of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda_expert: f64,
    pub expert_k: usize,
    pub horizon: usize,
    pub n_actors: usize,
    pub base_lr: f64,
    pub beta_entropy: f64,
    pub advantage: AdvantageVariant,
    pub total_env_steps: u64,
    /// Updates between evaluations and checkpoints.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seed: u64,
    pub env_id: String,
    pub expert_path: Option<String>,
    /// Use only the first N expert trajectories (0 keeps all).
    pub expert_trajectories: usize,
    pub curriculum: bool,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub kfac: KfacConfig,
    pub trust: TrustRegionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            lambda_expert: 0.25,
            expert_k: 64,
            horizon: 20,
            n_actors: 16,
            base_lr: 0.03,
            beta_entropy: 0.001,
            advantage: AdvantageVariant::Critic,
            total_env_steps: 200_000,
            eval_every: 25,
            eval_episodes: 10,
            seed: 0,
            env_id: String::from(crate::env::layouts::SPARSE_MAZE_ID),
            expert_path: None,
            expert_trajectories: 0,
            curriculum: false,
            hidden_units: 64,
            hidden_layers: 2,
            kfac: KfacConfig::default(),
            trust: TrustRegionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.lambda_expert >= 0.0 && self.lambda_expert.is_finite()) {
            return bad("lambda_expert must be a finite value >= 0");
        }
        if self.expert_k == 0 || self.horizon == 0 || self.n_actors == 0 || self.hidden_units == 0 {
            return bad("expert_k, horizon, n_actors and hidden_units must be positive");
        }
        if !(self.base_lr > 0.0) || !(self.beta_entropy >= 0.0) {
            return bad("base_lr must be positive and beta_entropy non-negative");
        }
        if self.total_env_steps == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("total_env_steps, eval_every and eval_episodes must be positive");
        }
        let k = &self.kfac;
        if !(k.ema_decay > 0.0 && k.ema_decay < 1.0) || !(k.damping > 0.0) || k.refresh_interval == 0 {
            return bad("kfac ema_decay must lie in (0, 1), damping and refresh_interval must be positive");
        }
        if !(self.trust.delta_kl > 0.0) || !(self.trust.max_lr > 0.0) {
            return bad("delta_kl and max_lr must be positive");
        }
        Ok(())
    }

    pub fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_units; self.hidden_layers]
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.n_actors * self.horizon) as u64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct A2cLoss {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Mean over the batch of
/// `-adv * log pi(a|s) + 0.5 (R - V(s))^2 - beta * H(pi(.|s))`.
pub fn a2c_loss(net: &PolicyNet, batch: &RolloutBatch, beta: f64) -> Result<A2cLoss> {
    let t = net.forward(&batch.observations, batch.len())?;
    Ok(a2c_terms(&t, batch, beta).1)
}

fn a2c_terms(t: &ForwardTrace, batch: &RolloutBatch, beta: f64) -> (Vec<f64>, A2cLoss, Vec<f64>) {
    let n = batch.len();
    let a = t.action_count;
    let inv = 1.0 / n as f64;
    let mut lg = vec![0.0; n * a];
    let mut vg = vec![0.0; n];
    let mut loss = A2cLoss::default();
    for b in 0..n {
        let row = t.logits_row(b);
        let lp = log_softmax(row);
        let p: Vec<f64> = lp.iter().map(|&l| libm::exp(l)).collect();
        let h = -p.iter().zip(&lp).map(|(p, l)| p * l).sum::<f64>();
        let adv = batch.advantages[b];
        let act = batch.actions[b];
        let diff = batch.returns[b] - t.values[b];
        loss.policy -= adv * lp[act] * inv;
        loss.value += 0.5 * diff * diff * inv;
        loss.entropy += h * inv;
        for j in 0..a {
            let onehot = if j == act { 1.0 } else { 0.0 };
            // d(-adv log p_a)/dz_j = -adv (1[j=a] - p_j); d(-beta H)/dz_j = beta p_j (log p_j + H).
            lg[b * a + j] = (-adv * (onehot - p[j]) + beta * p[j] * (lp[j] + h)) * inv;
        }
        vg[b] = -diff * inv;
    }
    loss.total = loss.policy + loss.value - beta * loss.entropy;
    (lg, loss, vg)
}

/// Gradient of [`a2c_loss`]; returns and advantages are constants.
pub fn a2c_gradient(net: &PolicyNet, batch: &RolloutBatch, beta: f64) -> Result<(GradientSet, A2cLoss, ForwardTrace)> {
    let t = net.forward(&batch.observations, batch.len())?;
    let (lg, loss, vg) = a2c_terms(&t, batch, beta);
    let bp = backward(net, &t, &lg, &vg)?;
    Ok((bp.grads, loss, t))
}

/// A sampled expert minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertBatch {
    pub observations: Vec<f64>,
    pub actions: Vec<ActionId>,
    pub reward_to_go: Vec<f64>,
}

impl ExpertBatch {
    pub fn from_indices(ds: &ExpertDataset, idx: &[usize]) -> ExpertBatch {
        ExpertBatch {
            observations: ds.observations(idx),
            actions: idx.iter().map(|&i| ds.steps[i].action).collect(),
            reward_to_go: idx.iter().map(|&i| ds.steps[i].reward_to_go).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExpertLoss {
    pub loss: f64,
    pub mean_advantage: f64,
}

fn expert_terms(t: &ForwardTrace, eb: &ExpertBatch, adv: &[f64]) -> Result<(Vec<f64>, ExpertLoss)> {
    let k = eb.len();
    let a = t.action_count;
    if adv.len() != k {
        return Err(Error::LengthMismatch(adv.len(), k));
    }
    let inv = 1.0 / k as f64;
    let mut lg = vec![0.0; k * a];
    let mut out = ExpertLoss::default();
    for b in 0..k {
        let act = eb.actions[b];
        if act >= a {
            return Err(Error::ActionOutOfRange { action: act, count: a });
        }
        let row = t.logits_row(b);
        out.loss -= adv[b] * log_softmax(row)[act] * inv;
        out.mean_advantage += adv[b] * inv;
        let p = action_distribution(row);
        for j in 0..a {
            let onehot = if j == act { 1.0 } else { 0.0 };
            lg[b * a + j] = -adv[b] * (onehot - p[j]) * inv;
        }
    }
    Ok((lg, out))
}

/// Expert advantages under the current critic.
pub fn expert_advantages(net: &PolicyNet, eb: &ExpertBatch, variant: AdvantageVariant) -> Result<Vec<f64>> {
    let t = net.forward(&eb.observations, eb.len())?;
    Ok(expert_advantage(variant, &eb.reward_to_go, &t.values))
}

/// `-(1/k) sum_i adv_i log pi(a_i | s_i)` for the given advantages.
pub fn expert_loss(net: &PolicyNet, eb: &ExpertBatch, advantages: &[f64]) -> Result<ExpertLoss> {
    let t = net.forward(&eb.observations, eb.len())?;
    Ok(expert_terms(&t, eb, advantages)?.1)
}

/// Gradient of [`expert_loss`] with advantages computed from the current
/// critic and held constant.
pub fn expert_gradient(net: &PolicyNet, eb: &ExpertBatch, variant: AdvantageVariant) -> Result<(GradientSet, ExpertLoss)> {
    let t = net.forward(&eb.observations, eb.len())?;
    let adv = expert_advantage(variant, &eb.reward_to_go, &t.values);
    let (lg, loss) = expert_terms(&t, eb, &adv)?;
    let bp = backward(net, &t, &lg, &vec![0.0; eb.len()])?;
    Ok((bp.grads, loss))
}

/// `a2c_loss + lambda_expert * expert_loss` with explicit expert
/// advantages; the expert batch is ignored when `lambda_expert` is zero.
pub fn combined_loss(net: &PolicyNet, rollout: &RolloutBatch, expert: Option<(&ExpertBatch, &[f64])>, cfg: &TrainConfig) -> Result<f64> {
    let mut l = a2c_loss(net, rollout, cfg.beta_entropy)?.total;
    if cfg.lambda_expert > 0.0 {
        let (eb, adv) = expert.ok_or(Error::MissingExpert)?;
        l += cfg.lambda_expert * expert_loss(net, eb, adv)?.loss;
    }
    Ok(l)
}

/// Gradient of [`combined_loss`], with the rollout trace for the Fisher pass.
pub fn combined_gradient(
    net: &PolicyNet,
    rollout: &RolloutBatch,
    expert: Option<&ExpertBatch>,
    cfg: &TrainConfig,
) -> Result<(GradientSet, A2cLoss, Option<ExpertLoss>, ForwardTrace)> {
    let (mut g, a2c, trace) = a2c_gradient(net, rollout, cfg.beta_entropy)?;
    if !a2c.total.is_finite() {
        return Err(Error::NonFinite("a2c loss"));
    }
    let mut stats = None;
    if cfg.lambda_expert > 0.0 {
        let eb = expert.ok_or(Error::MissingExpert)?;
        let (ge, el) = expert_gradient(net, eb, cfg.advantage)?;
        if !el.loss.is_finite() {
            return Err(Error::NonFinite("expert loss"));
        }
        g.add_scaled(&ge, cfg.lambda_expert);
        stats = Some(el);
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok((g, a2c, stats, trace))
}

/// Folds the rollout's true-Fisher statistics into `fisher`: actions are
/// resampled from the current policy and their log-likelihood gradients
/// back-propagated per sample.
pub fn update_fisher(net: &PolicyNet, fisher: &mut FisherState, trace: &ForwardTrace, rng: &mut Rng) -> Result<()> {
    let n = trace.batch;
    let a = trace.action_count;
    let mut lg = vec![0.0; n * a];
    for b in 0..n {
        let p = action_distribution(trace.logits_row(b));
        let s = sample_categorical(&p, rng);
        for j in 0..a {
            lg[b * a + j] = p[j] - if j == s { 1.0 } else { 0.0 };
        }
    }
    let bp = backward(net, trace, &lg, &vec![0.0; n])?;
    fisher.update_factors(trace, &bp.preact)
}

/// What one combined update did.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub a2c: A2cLoss,
    pub expert: Option<ExpertLoss>,
    pub eta: f64,
    /// Gradient before preconditioning.
    pub raw_gradient: GradientSet,
    pub step: GradientSet,
}

/// RNG streams consumed by [`combined_update`].
#[derive(Clone, Debug)]
pub struct UpdateRngs {
    pub fisher: Rng,
    pub expert: Rng,
}

impl UpdateRngs {
    pub fn new(seed: u64) -> Self {
        UpdateRngs { fisher: rng_for(seed, stream::FISHER, 0), expert: rng_for(seed, stream::EXPERT, 1) }
    }
}

/// `g = g_a2c + lambda_expert * g_expert`, Fisher refresh from the rollout,
/// natural-gradient trust-region step.
pub fn combined_update(
    net: &mut PolicyNet,
    fisher: &mut FisherState,
    rollout: &RolloutBatch,
    expert: Option<&ExpertDataset>,
    cfg: &TrainConfig,
    rngs: &mut UpdateRngs,
) -> Result<UpdateStats> {
    let eb = match expert {
        Some(ds) if cfg.lambda_expert > 0.0 => {
            let idx = sample_batch(ds, cfg.expert_k, &mut rngs.expert)?;
            Some(ExpertBatch::from_indices(ds, &idx))
        }
        None if cfg.lambda_expert > 0.0 => return Err(Error::MissingExpert),
        _ => None,
    };
    let (g, a2c, expert_stats, trace) = combined_gradient(net, rollout, eb.as_ref(), cfg)?;
    update_fisher(net, fisher, &trace, &mut rngs.fisher)?;
    let step = fisher.precondition(&g)?;
    let eta = trust_region_step(net, &step, fisher, &cfg.trust, cfg.base_lr)?;
    Ok(UpdateStats { a2c, expert: expert_stats, eta, raw_gradient: g, step })
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainMetrics {
    pub update: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub mean_reward: f64,
    pub median_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub expert_accuracy: f64,
    pub expert_loss: f64,
    pub eta: f64,
    /// Filled in by drivers that have a clock; zero otherwise.
    pub wall_clock: f64,
}

impl TrainMetrics {
    pub fn is_finite(&self) -> bool {
        [
            self.mean_reward,
            self.median_reward,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.expert_accuracy,
            self.expert_loss,
            self.eta,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Episodes averaged for the running reward statistics.
pub const RECENT_EPISODES: usize = 100;

/// Owns the parameters, Fisher state, actors and RNG streams of one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub spec: Arc<EnvSpec>,
    pub net: PolicyNet,
    pub fisher: FisherState,
    envs: VecEnv,
    expert: Option<ExpertDataset>,
    action_rng: Rng,
    rngs: UpdateRngs,
    env_steps: u64,
    updates: u64,
    episodes: u64,
    recent: VecDeque<f64>,
}

impl Trainer {
    /// `spec` is the canonical layout; the curriculum flag of `cfg` decides
    /// whether training actors respawn at random cells. The expert dataset is
    /// re-indexed with `cfg.gamma` and optionally truncated.
    pub fn new(cfg: TrainConfig, spec: &EnvSpec, expert: Option<ExpertDataset>) -> Result<Trainer> {
        cfg.validate()?;
        let expert = match expert {
            Some(ds) => {
                ds.check_env(spec)?;
                let keep = if cfg.expert_trajectories == 0 { ds.trajectory_count } else { cfg.expert_trajectories };
                Some(ExpertDataset::new(&ds.env_id, ds.trajectories()[..keep.min(ds.trajectory_count)].to_vec(), cfg.gamma)?)
            }
            None => None,
        };
        if cfg.lambda_expert > 0.0 && expert.as_ref().is_none_or(|d| d.is_empty()) {
            return Err(Error::MissingExpert);
        }
        let spec = Arc::new(spec.with_curriculum(cfg.curriculum));
        let net = PolicyNet::new(spec.obs_dim(), &cfg.hidden(), spec.action_count(), cfg.seed);
        let fisher = FisherState::new(&net, cfg.kfac);
        let envs = VecEnv::new(spec.clone(), cfg.n_actors, cfg.seed);
        Ok(Trainer {
            action_rng: rng_for(cfg.seed, stream::ACTIONS, 0),
            rngs: UpdateRngs::new(cfg.seed),
            cfg,
            spec,
            net,
            fisher,
            envs,
            expert,
            env_steps: 0,
            updates: 0,
            episodes: 0,
            recent: VecDeque::new(),
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn expert(&self) -> Option<&ExpertDataset> {
        self.expert.as_ref()
    }

    pub fn finished(&self) -> bool {
        self.env_steps >= self.cfg.total_env_steps
    }

    /// Collect, update, and report. Any non-finite quantity is an error.
    pub fn update(&mut self) -> Result<TrainMetrics> {
        let batch = collect(&self.net, &mut self.envs, self.cfg.horizon, self.cfg.gamma, &mut self.action_rng)?;
        let stats = combined_update(&mut self.net, &mut self.fisher, &batch, self.expert.as_ref(), &self.cfg, &mut self.rngs)?;
        self.env_steps += batch.len() as u64;
        self.updates += 1;
        for e in &batch.completed {
            self.episodes += 1;
            if self.recent.len() == RECENT_EPISODES {
                self.recent.pop_front();
            }
            self.recent.push_back(e.episode_return);
        }
        let (mean, median) = mean_median(self.recent.iter().copied().collect());
        let accuracy = match &self.expert {
            Some(ds) => expert_accuracy(&self.net, ds)?,
            None => 0.0,
        };
        let m = TrainMetrics {
            update: self.updates,
            env_steps: self.env_steps,
            episodes: self.episodes,
            mean_reward: mean,
            median_reward: median,
            policy_loss: stats.a2c.policy,
            value_loss: stats.a2c.value,
            entropy: stats.a2c.entropy,
            expert_accuracy: accuracy,
            expert_loss: stats.expert.map_or(0.0, |e| e.loss),
            eta: stats.eta,
            wall_clock: 0.0,
        };
        if !m.is_finite() {
            return Err(Error::NonFinite("training metrics"));
        }
        Ok(m)
    }
}

/// Mean and median; both zero for an empty sample.
pub fn mean_median(mut xs: Vec<f64>) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let median = if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) };
    (mean, median)
}
