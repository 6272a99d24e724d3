//! Training driver: runs a [`Trainer`] to completion and writes its logs and
//! checkpoints into a run directory.
//!
//! Files: `config.txt` (resolved configuration), `metrics.csv`, `eval.csv`,
//! `timing.csv`, `policy.ckpt`, `fisher.ckpt`. A run that hits a non-finite
//! value leaves `diagnostic.ckpt` with the last finite parameters.

use std::path::Path;
use std::time::Instant;

use eaktr_core::env::EnvSpec;
use eaktr_core::eval::{evaluate, EvalReport, PolicyMode};
use eaktr_core::expert::ExpertDataset;
use eaktr_core::policy::PolicyNet;
use eaktr_core::rng::{derive_seed, stream};
use eaktr_core::trainer::{TrainConfig, TrainMetrics, Trainer};

use crate::checkpoint::{save_fisher, save_policy, CheckpointMeta};
use crate::error::{Error, Result};
use crate::metrics::{eval_fields, metrics_fields, CsvLog, EvalRow, EVAL_COLUMNS, METRICS_COLUMNS, TIMING_COLUMNS};

/// Driver knobs that do not change what a run computes, only when it stops.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Stop at the first evaluation whose greedy success rate reaches this.
    pub stop_at_success: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: PolicyNet,
    pub metrics: Vec<TrainMetrics>,
    pub evals: Vec<EvalRow>,
    pub final_greedy: EvalReport,
    pub final_stochastic: EvalReport,
    /// Env steps at the first evaluation with greedy success >= 0.95.
    pub steps_to_solve: Option<u64>,
}

impl TrainOutcome {
    pub fn final_expert_accuracy(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.expert_accuracy)
    }

    pub fn env_steps(&self) -> u64 {
        self.metrics.last().map_or(0, |m| m.env_steps)
    }
}

pub const SOLVED_SUCCESS_RATE: f64 = 0.95;

/// Greedy and stochastic evaluations from the canonical start.
pub fn evaluate_both(net: &PolicyNet, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<(EvalReport, EvalReport)> {
    let g = evaluate(net, spec, episodes, PolicyMode::Greedy, seed)?;
    let s = evaluate(net, spec, episodes, PolicyMode::Stochastic, seed)?;
    Ok((g, s))
}

/// Runs `cfg` on `spec` and writes the run files into `dir`, which must exist.
pub fn train_into(cfg: &TrainConfig, spec: &EnvSpec, expert: Option<ExpertDataset>, dir: &Path, opts: RunOptions) -> Result<TrainOutcome> {
    crate::config::save_config(cfg, &dir.join("config.txt"))?;
    let eval_spec = spec.with_curriculum(false);
    let mut trainer = Trainer::new(cfg.clone(), spec, expert)?;
    let mut metrics_log = CsvLog::create(&dir.join("metrics.csv"), &METRICS_COLUMNS)?;
    let mut eval_log = CsvLog::create(&dir.join("eval.csv"), &EVAL_COLUMNS)?;
    let mut timing_log = CsvLog::create(&dir.join("timing.csv"), &TIMING_COLUMNS)?;
    let start = Instant::now();
    let mut out = TrainOutcome {
        net: trainer.net.clone(),
        metrics: Vec::new(),
        evals: Vec::new(),
        final_greedy: EvalReport::from_episodes(Vec::new(), Vec::new(), PolicyMode::Greedy),
        final_stochastic: EvalReport::from_episodes(Vec::new(), Vec::new(), PolicyMode::Stochastic),
        steps_to_solve: None,
    };
    loop {
        let last_good = trainer.net.clone();
        let mut m = match trainer.update() {
            Ok(m) => m,
            Err(e @ eaktr_core::Error::NonFinite(_)) => {
                let meta = CheckpointMeta { seed: cfg.seed, env_steps: trainer.env_steps(), updates: trainer.updates() };
                save_policy(&last_good, meta, &dir.join("diagnostic.ckpt"))?;
                return Err(Error::Invalid(format!("training aborted at update {}: {e}; last finite parameters in diagnostic.ckpt", trainer.updates() + 1)));
            }
            Err(e) => return Err(e.into()),
        };
        m.wall_clock = start.elapsed().as_secs_f64();
        metrics_log.row(metrics_fields(&m))?;
        timing_log.row([m.update.to_string(), m.wall_clock.to_string()])?;
        out.metrics.push(m);
        let finished = trainer.finished();
        if m.update % cfg.eval_every == 0 || finished {
            let seed = derive_seed(cfg.seed, stream::EVAL, m.update);
            let (g, s) = evaluate_both(&trainer.net, &eval_spec, cfg.eval_episodes, seed)?;
            for r in [&g, &s] {
                eval_log.row(eval_fields(m.update, m.env_steps, r))?;
                out.evals.push(EvalRow::new(m.update, m.env_steps, r));
            }
            let meta = CheckpointMeta { seed: cfg.seed, env_steps: m.env_steps, updates: m.update };
            save_policy(&trainer.net, meta, &dir.join("policy.ckpt"))?;
            save_fisher(&trainer.fisher, meta, &dir.join("fisher.ckpt"))?;
            if out.steps_to_solve.is_none() && g.success_rate >= SOLVED_SUCCESS_RATE {
                out.steps_to_solve = Some(m.env_steps);
            }
            let stop = opts.stop_at_success.is_some_and(|t| g.success_rate >= t);
            out.final_greedy = g;
            out.final_stochastic = s;
            if finished || stop {
                break;
            }
        }
    }
    out.net = trainer.net;
    Ok(out)
}
