//! Expert demonstrations: planner-generated trajectories, the replayable
//! dataset, minibatch sampling, expert advantages, the accuracy metric and
//! a behavioral-cloning baseline.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;

use crate::env::{search, Cause, EnvSpec, EnvState, ObservationStack};
use crate::policy::{action_distribution, argmax, backward, log_softmax, GradientSet, PolicyNet};
use crate::rng::{rng_for, stream, Rng};
use crate::{ActionId, Error, Result};

/// One demonstrated episode as raw single frames (before each action).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Vec<f64>>,
    pub actions: Vec<ActionId>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Shortest action sequence from `from` that collects the maximal reward
/// achievable before the step limit.
pub fn plan_from(spec: &EnvSpec, from: &EnvState) -> Result<Vec<ActionId>> {
    let budget = spec.step_limit.saturating_sub(from.step_count);
    let tree = search::breadth_first(spec, from, budget)?;
    let best = tree.best().ok_or_else(|| Error::Planning("no surviving plan".into()))?;
    Ok(tree.actions_to(best))
}

/// Rolls out the planner from the canonical start. With probability
/// `noise` per step a uniformly random action replaces the planned one and
/// the plan is recomputed from wherever that lands. The result is checked by
/// replaying it through the environment.
pub fn plan_expert(spec: &EnvSpec, noise: f64, seed: u64) -> Result<Trajectory> {
    if !(0.0..1.0).contains(&noise) {
        return Err(Error::Planning(alloc::format!("noise {noise} outside [0, 1)")));
    }
    let mut rng = rng_for(seed, stream::EXPERT, 0);
    let mut state = spec.start_state();
    let mut plan = plan_from(spec, &state)?;
    if plan.is_empty() {
        return Err(Error::Planning("objective unreachable from the start".into()));
    }
    let idle = spec.actions.iter().position(|a| *a == crate::env::ActionKind::Wait).unwrap_or(1.min(spec.action_count() - 1));
    let mut traj = Trajectory { frames: Vec::new(), actions: Vec::new(), rewards: Vec::new(), dones: Vec::new() };
    let mut cursor = 0;
    while !state.done {
        let random = noise > 0.0 && rng.random::<f64>() < noise;
        let action = if random {
            rng.random_range(0..spec.action_count())
        } else if cursor < plan.len() {
            cursor += 1;
            plan[cursor - 1]
        } else {
            idle
        };
        traj.frames.push(spec.frame(&state));
        let (next, out) = spec.step(&state, action)?;
        traj.actions.push(action);
        traj.rewards.push(out.reward);
        traj.dones.push(out.done);
        state = next;
        if random && !state.done {
            plan = plan_from(spec, &state)?;
            cursor = 0;
        }
    }
    replay(spec, &traj)?;
    Ok(traj)
}

/// Replays `traj` from the canonical start and checks frames, rewards and
/// done flags.
pub fn replay(spec: &EnvSpec, traj: &Trajectory) -> Result<()> {
    let mismatch = |what: &str, i: usize| Error::Planning(alloc::format!("replay mismatch in {what} at step {i}"));
    let mut state = spec.start_state();
    for i in 0..traj.len() {
        if traj.frames[i] != spec.frame(&state) {
            return Err(mismatch("observation", i));
        }
        if state.done {
            return Err(mismatch("episode length", i));
        }
        let (next, out) = spec.step(&state, traj.actions[i])?;
        if out.reward != traj.rewards[i] {
            return Err(mismatch("reward", i));
        }
        if out.done != traj.dones[i] {
            return Err(mismatch("done flag", i));
        }
        state = next;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertStep {
    pub observation: ObservationStack,
    pub action: ActionId,
    pub reward: f64,
    pub done: bool,
    pub reward_to_go: f64,
}

/// Immutable demonstration set. `episode_boundaries[i]` is the index of the
/// first step of trajectory `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertDataset {
    pub env_id: String,
    pub steps: Vec<ExpertStep>,
    pub episode_boundaries: Vec<usize>,
    pub trajectory_count: usize,
    pub gamma: f64,
    trajectories: Vec<Trajectory>,
}

impl ExpertDataset {
    /// Rebuilds observation stacks from raw frames and computes
    /// reward-to-go for `gamma`.
    pub fn new(env_id: &str, trajectories: Vec<Trajectory>, gamma: f64) -> Result<ExpertDataset> {
        let mut steps = Vec::new();
        let mut bounds = Vec::with_capacity(trajectories.len());
        for t in &trajectories {
            let n = t.len();
            if t.frames.len() != n || t.rewards.len() != n || t.dones.len() != n {
                return Err(Error::LengthMismatch(t.frames.len(), n));
            }
            if n == 0 {
                return Err(Error::EmptyDataset);
            }
            bounds.push(steps.len());
            let rtg = reward_to_go(&t.rewards, &t.dones, gamma);
            let mut stack = ObservationStack::padded(t.frames[0].clone());
            for i in 0..n {
                if i > 0 {
                    stack.push(&t.frames[i]);
                }
                steps.push(ExpertStep { observation: stack.clone(), action: t.actions[i], reward: t.rewards[i], done: t.dones[i], reward_to_go: rtg[i] });
            }
        }
        Ok(ExpertDataset {
            env_id: env_id.to_string(),
            steps,
            episode_boundaries: bounds,
            trajectory_count: trajectories.len(),
            gamma,
            trajectories,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// First `n` trajectories as a new dataset.
    pub fn truncated(&self, n: usize) -> Result<ExpertDataset> {
        ExpertDataset::new(&self.env_id, self.trajectories[..n.min(self.trajectories.len())].to_vec(), self.gamma)
    }

    /// Mean undiscounted episode reward of the demonstrations.
    pub fn mean_score(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(Trajectory::total_reward).sum::<f64>() / self.trajectories.len() as f64
    }

    pub fn check_env(&self, spec: &EnvSpec) -> Result<()> {
        if self.env_id != spec.env_id {
            return Err(Error::EnvMismatch { expected: spec.env_id.clone(), found: self.env_id.clone() });
        }
        Ok(())
    }

    /// Replays every trajectory through `spec`.
    pub fn validate_replay(&self, spec: &EnvSpec) -> Result<()> {
        self.check_env(spec)?;
        self.trajectories.iter().try_for_each(|t| replay(spec, t))
    }

    pub fn observations(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::new();
        for &i in indices {
            out.extend_from_slice(self.steps[i].observation.as_slice());
        }
        out
    }
}

/// Discounted within-episode suffix sums; a terminal step's value is its
/// own reward.
pub fn reward_to_go(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for i in (0..rewards.len()).rev() {
        if dones[i] {
            running = 0.0;
        }
        running = rewards[i] + gamma * running;
        out[i] = running;
    }
    out
}

/// Generates `count` planner trajectories with per-trajectory seeds.
pub fn generate_dataset(spec: &EnvSpec, count: usize, noise: f64, seed: u64, gamma: f64) -> Result<ExpertDataset> {
    let trajs = (0..count).map(|i| plan_expert(spec, noise, crate::rng::derive_seed(seed, stream::EXPERT, i as u64))).collect::<Result<Vec<_>>>()?;
    ExpertDataset::new(&spec.env_id, trajs, gamma)
}

/// Uniform sampling with replacement over all steps.
pub fn sample_batch(ds: &ExpertDataset, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((0..k).map(|_| rng.random_range(0..ds.len())).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvantageVariant {
    Reward,
    Critic,
    Simple,
}

impl AdvantageVariant {
    pub const ALL: [AdvantageVariant; 3] = [AdvantageVariant::Reward, AdvantageVariant::Critic, AdvantageVariant::Simple];

    pub fn name(self) -> &'static str {
        match self {
            AdvantageVariant::Reward => "reward",
            AdvantageVariant::Critic => "critic",
            AdvantageVariant::Simple => "simple",
        }
    }
}

impl fmt::Display for AdvantageVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdvantageVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reward" => Ok(AdvantageVariant::Reward),
            "critic" => Ok(AdvantageVariant::Critic),
            "simple" => Ok(AdvantageVariant::Simple),
            _ => Err(Error::InvalidConfig(alloc::format!("unknown advantage variant `{s}`"))),
        }
    }
}

/// Weights for the expert log-likelihood terms.
pub fn expert_advantage(variant: AdvantageVariant, reward_to_go: &[f64], values: &[f64]) -> Vec<f64> {
    match variant {
        AdvantageVariant::Reward => reward_to_go.to_vec(),
        AdvantageVariant::Critic => reward_to_go.iter().zip(values).map(|(r, v)| (r - v).max(0.0)).collect(),
        AdvantageVariant::Simple => vec![1.0; reward_to_go.len()],
    }
}

/// Fraction of expert steps where the greedy action equals the expert's.
pub fn expert_accuracy(net: &PolicyNet, ds: &ExpertDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for chunk in (0..ds.len()).collect::<Vec<_>>().chunks(256) {
        let t = net.forward(&ds.observations(chunk), chunk.len())?;
        for (b, &i) in chunk.iter().enumerate() {
            if argmax(t.logits_row(b)) == ds.steps[i].action {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / ds.len() as f64)
}

/// Gradient and value of the mean negative log-likelihood of `actions`.
pub fn bc_gradient(net: &PolicyNet, obs: &[f64], actions: &[ActionId]) -> Result<(GradientSet, f64)> {
    let n = actions.len();
    let a = net.action_count();
    let t = net.forward(obs, n)?;
    let mut lg = vec![0.0; n * a];
    let mut loss = 0.0;
    let inv = 1.0 / n as f64;
    for b in 0..n {
        let row = t.logits_row(b);
        if actions[b] >= a {
            return Err(Error::ActionOutOfRange { action: actions[b], count: a });
        }
        loss -= log_softmax(row)[actions[b]] * inv;
        let p = action_distribution(row);
        for j in 0..a {
            let onehot = if j == actions[b] { 1.0 } else { 0.0 };
            lg[b * a + j] = (p[j] - onehot) * inv;
        }
    }
    let bp = backward(net, &t, &lg, &vec![0.0; n])?;
    Ok((bp.grads, loss))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BcMetrics {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Full-batch gradient descent on the expert NLL. No value loss, no
/// natural-gradient preconditioning.
pub fn bc_train(mut net: PolicyNet, ds: &ExpertDataset, steps: usize, lr: f64) -> Result<(PolicyNet, Vec<BcMetrics>)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let obs = ds.observations(&idx);
    let actions: Vec<ActionId> = ds.steps.iter().map(|s| s.action).collect();
    let mut metrics = Vec::with_capacity(steps);
    for step in 0..steps {
        let (g, loss) = bc_gradient(&net, &obs, &actions)?;
        if !loss.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite("behavioral cloning loss"));
        }
        net.apply_delta(&g, -lr);
        metrics.push(BcMetrics { step, loss, accuracy: expert_accuracy(&net, ds)? });
    }
    Ok((net, metrics))
}

/// Whether a finished planner episode reached the goal.
pub fn reached_goal(spec: &EnvSpec, traj: &Trajectory) -> bool {
    let mut s = spec.start_state();
    let mut cause = Cause::None;
    for &a in &traj.actions {
        match spec.step(&s, a) {
            Ok((n, out)) => {
                s = n;
                cause = out.cause;
            }
            Err(_) => return false,
        }
    }
    cause == Cause::Goal
}
