//! Policy evaluation from the canonical start or from a list of start states.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;

use crate::env::{Cause, EnvSpec, EnvState, ObservationStack};
use crate::policy::{action_distribution, argmax, sample_categorical, PolicyNet};
use crate::rng::{derive_seed, stream, Rng};
use crate::trainer::mean_median;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyMode {
    Stochastic,
    Greedy,
}

impl PolicyMode {
    pub fn name(self) -> &'static str {
        match self {
            PolicyMode::Stochastic => "stochastic",
            PolicyMode::Greedy => "greedy",
        }
    }
}

impl fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(PolicyMode::Stochastic),
            "greedy" => Ok(PolicyMode::Greedy),
            _ => Err(Error::InvalidConfig(alloc::format!("unknown policy mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub success_rate: f64,
    pub policy_mode: PolicyMode,
    pub rewards: Vec<f64>,
    pub successes: Vec<bool>,
}

impl EvalReport {
    /// Aggregates per-episode outcomes.
    pub fn from_episodes(rewards: Vec<f64>, successes: Vec<bool>, policy_mode: PolicyMode) -> EvalReport {
        let n = rewards.len();
        let (mean, median) = mean_median(rewards.clone());
        let min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
        let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let wins = successes.iter().filter(|&&s| s).count();
        EvalReport {
            episodes: n,
            mean,
            median,
            min: if n == 0 { 0.0 } else { min },
            max: if n == 0 { 0.0 } else { max },
            success_rate: if n == 0 { 0.0 } else { wins as f64 / n as f64 },
            policy_mode,
            rewards,
            successes,
        }
    }
}

/// Layouts with items succeed when every item is collected; item-free
/// layouts succeed on reaching the goal.
pub fn is_success(spec: &EnvSpec, end: &EnvState, cause: Cause) -> bool {
    if spec.items().is_empty() {
        cause == Cause::Goal
    } else {
        end.inventory & spec.all_items_mask() == spec.all_items_mask()
    }
}

/// One full episode from `start`; returns the total reward, final state and
/// terminal cause.
pub fn run_episode(net: &PolicyNet, spec: &EnvSpec, start: EnvState, mode: PolicyMode, rng: &mut Rng) -> Result<(f64, EnvState, Cause)> {
    let mut state = start;
    let mut obs = ObservationStack::padded(spec.frame(&state));
    let mut total = 0.0;
    loop {
        let t = net.forward(obs.as_slice(), 1)?;
        let row = t.logits_row(0);
        let action = match mode {
            PolicyMode::Greedy => argmax(row),
            PolicyMode::Stochastic => sample_categorical(&action_distribution(row), rng),
        };
        let (next, out) = spec.step(&state, action)?;
        total += out.reward;
        state = next;
        if out.done {
            return Ok((total, state, out.cause));
        }
        obs = spec.observe(&state, &obs);
    }
}

/// `episodes` episodes from the canonical fixed start; curriculum respawn is
/// never used here.
pub fn evaluate(net: &PolicyNet, spec: &EnvSpec, episodes: usize, mode: PolicyMode, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let starts = alloc::vec![spec.start_state(); episodes];
    evaluate_from(net, spec, &starts, mode, seed)
}

/// One episode per entry of `starts`.
pub fn evaluate_from(net: &PolicyNet, spec: &EnvSpec, starts: &[EnvState], mode: PolicyMode, seed: u64) -> Result<EvalReport> {
    let mut rng = Rng::seed_from_u64(derive_seed(seed, stream::EVAL, 0));
    let mut rewards = Vec::with_capacity(starts.len());
    let mut wins = Vec::with_capacity(starts.len());
    for s in starts {
        let (r, end, cause) = run_episode(net, spec, *s, mode, &mut rng)?;
        rewards.push(r);
        wins.push(is_success(spec, &end, cause));
    }
    Ok(EvalReport::from_episodes(rewards, wins, mode))
}

/// The `count` open cells nearest to the start by shortest walking distance
/// (ties broken row-major), excluding the start itself, each with the start
/// heading.
pub fn perturbed_starts(spec: &EnvSpec, count: usize) -> Vec<EnvState> {
    use crate::env::Cell;
    let rows = spec.rows();
    let cols = spec.cols();
    let start = spec.start();
    let mut dist = alloc::vec![usize::MAX; rows * cols];
    let mut queue = alloc::collections::VecDeque::new();
    dist[start.row * cols + start.col] = 0;
    queue.push_back(start);
    let mut order = Vec::new();
    while let Some(p) = queue.pop_front() {
        let d = dist[p.row * cols + p.col];
        if p != start {
            order.push((d, p));
        }
        let nbrs = [(p.row.wrapping_sub(1), p.col), (p.row + 1, p.col), (p.row, p.col.wrapping_sub(1)), (p.row, p.col + 1)];
        for (r, c) in nbrs {
            if r >= rows || c >= cols || dist[r * cols + c] != usize::MAX {
                continue;
            }
            let q = crate::env::Position::new(r, c);
            if matches!(spec.cell(q), Cell::Floor | Cell::Start) {
                dist[r * cols + c] = d + 1;
                queue.push_back(q);
            }
        }
    }
    order.sort();
    let heading = spec.start_state().heading;
    order.into_iter().take(count).map(|(_, p)| spec.state_at(p, heading)).collect()
}
