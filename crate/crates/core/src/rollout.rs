//! Multi-actor experience collection and n-step bootstrapped returns.

use alloc::vec;
use alloc::vec::Vec;

use crate::env::{Cause, VecEnv};
use crate::policy::{action_distribution, sample_categorical, PolicyNet};
use crate::rng::Rng;
use crate::{ActionId, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeEnd {
    pub actor: usize,
    pub episode_return: f64,
    pub cause: Cause,
}

/// `n_actors x horizon` transitions, actor-major: entry `(n, t)` lives at
/// index `n * horizon + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub n_actors: usize,
    pub horizon: usize,
    pub obs_dim: usize,
    pub observations: Vec<f64>,
    pub actions: Vec<ActionId>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub bootstrap_values: Vec<f64>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Episodes that finished during collection, in completion order.
    pub completed: Vec<EpisodeEnd>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.n_actors * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }
}

/// Runs every actor for `horizon` steps under the stochastic policy and
/// fills in returns and advantages for discount `gamma`.
pub fn collect(net: &PolicyNet, envs: &mut VecEnv, horizon: usize, gamma: f64, rng: &mut Rng) -> Result<RolloutBatch> {
    let n = envs.len();
    let obs_dim = net.input_dim();
    let len = n * horizon;
    let mut batch = RolloutBatch {
        n_actors: n,
        horizon,
        obs_dim,
        observations: vec![0.0; len * obs_dim],
        actions: vec![0; len],
        rewards: vec![0.0; len],
        dones: vec![false; len],
        values: vec![0.0; len],
        bootstrap_values: vec![0.0; n],
        returns: Vec::new(),
        advantages: Vec::new(),
        completed: Vec::new(),
    };
    let mut current = vec![0.0; n * obs_dim];
    for t in 0..horizon {
        for (i, env) in envs.envs().iter().enumerate() {
            current[i * obs_dim..(i + 1) * obs_dim].copy_from_slice(env.observation().as_slice());
        }
        let trace = net.forward(&current, n)?;
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let probs = action_distribution(trace.logits_row(i));
            actions.push(sample_categorical(&probs, rng));
        }
        let results = envs.step(&actions)?;
        for (i, r) in results.iter().enumerate() {
            let k = i * horizon + t;
            batch.observations[k * obs_dim..(k + 1) * obs_dim].copy_from_slice(&current[i * obs_dim..(i + 1) * obs_dim]);
            batch.actions[k] = actions[i];
            batch.rewards[k] = r.reward;
            batch.dones[k] = r.done;
            batch.values[k] = trace.values[i];
            if let Some(ret) = r.episode_return {
                batch.completed.push(EpisodeEnd { actor: i, episode_return: ret, cause: r.cause });
            }
        }
    }
    for (i, env) in envs.envs().iter().enumerate() {
        current[i * obs_dim..(i + 1) * obs_dim].copy_from_slice(env.observation().as_slice());
    }
    batch.bootstrap_values = net.forward(&current, n)?.values;
    batch.returns = compute_returns(&batch.rewards, &batch.dones, &batch.bootstrap_values, gamma, horizon)?;
    batch.advantages = compute_advantages(&batch.returns, &batch.values)?;
    Ok(batch)
}

/// Backward recursion `R_t = r_t + gamma * R_{t+1}`, seeded with the
/// bootstrap value per actor and cut at terminal steps.
pub fn compute_returns(rewards: &[f64], dones: &[bool], bootstrap_values: &[f64], gamma: f64, horizon: usize) -> Result<Vec<f64>> {
    if rewards.len() != dones.len() {
        return Err(Error::LengthMismatch(rewards.len(), dones.len()));
    }
    if rewards.len() != bootstrap_values.len() * horizon {
        return Err(Error::LengthMismatch(rewards.len(), bootstrap_values.len() * horizon));
    }
    let mut out = vec![0.0; rewards.len()];
    for (actor, &v) in bootstrap_values.iter().enumerate() {
        let mut running = v;
        for t in (0..horizon).rev() {
            let k = actor * horizon + t;
            let cont = if dones[k] { 0.0 } else { gamma * running };
            running = rewards[k] + cont;
            out[k] = running;
        }
    }
    Ok(out)
}

pub fn compute_advantages(returns: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if returns.len() != values.len() {
        return Err(Error::LengthMismatch(returns.len(), values.len()));
    }
    Ok(returns.iter().zip(values).map(|(r, v)| r - v).collect())
}
