//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails. `EAKTR_CRITERIA=1,2,5` restricts the run to a subset.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use eaktr::harness::{run_sweep, Axis, SweepSpec};
use eaktr::train::{train_into, RunOptions, TrainOutcome, SOLVED_SUCCESS_RATE};
use eaktr_core::env::{layouts, EnvSpec};
use eaktr_core::eval::{evaluate, evaluate_from, perturbed_starts, PolicyMode};
use eaktr_core::expert::{bc_train, generate_dataset, AdvantageVariant, ExpertDataset};
use eaktr_core::policy::PolicyNet;
use eaktr_core::trainer::{mean_median, TrainConfig};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

// ---------------------------------------------------------------------------
// Shared experiment settings.

/// Every environment experiment: 64 actors, lr 0.25, damping 1e-4.
fn experiment_config(env_id: &str, seed: u64, total_env_steps: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        env_id: env_id.into(),
        seed,
        n_actors: 64,
        base_lr: 0.25,
        total_env_steps,
        eval_every: 5,
        eval_episodes: 5,
        advantage: AdvantageVariant::Critic,
        ..TrainConfig::default()
    };
    cfg.kfac.damping = 1e-4;
    cfg
}

fn sparse_config(seed: u64) -> TrainConfig {
    experiment_config(layouts::SPARSE_MAZE_ID, seed, 200_000)
}

const CURRICULUM_BUDGET: u64 = 4_000_000;

fn montezuma_config(seed: u64) -> TrainConfig {
    TrainConfig { eval_every: 50, ..experiment_config(layouts::MINI_MONTEZUMA_ID, seed, MONTEZUMA_STEPS) }
}

const MONTEZUMA_STEPS: u64 = 300_000;
const ACCURACY_STEPS: u64 = 128_000;
const MONTEZUMA_RESPAWN_STEPS: u64 = 600_000;
const MONTEZUMA_TRAJECTORIES: usize = 14;
const MONTEZUMA_NOISE: f64 = 0.15;
const BC_STEPS: usize = 2000;
const BC_LR: f64 = 0.5;
const PERTURBED_STARTS: usize = 20;
const EPISODES_PER_START: usize = 5;

fn montezuma_dataset(noise: f64, seed: u64, gamma: f64) -> ExpertDataset {
    generate_dataset(&layouts::mini_montezuma(), MONTEZUMA_TRAJECTORIES, noise, seed, gamma).expect("planner dataset")
}

fn sparse_expert(gamma: f64) -> ExpertDataset {
    generate_dataset(&layouts::sparse_maze(), 1, 0.0, 0, gamma).expect("planner dataset")
}

fn run(cfg: &TrainConfig, spec: &EnvSpec, expert: Option<ExpertDataset>, stop: bool) -> (TrainOutcome, f64) {
    let dir = tmp();
    let t = Instant::now();
    let opts = RunOptions { stop_at_success: stop.then_some(SOLVED_SUCCESS_RATE) };
    let out = train_into(cfg, spec, expert, dir.path(), opts).expect("training run");
    (out, t.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------------------
// Criteria.

fn gradient_certification() -> Verdict {
    let t = Instant::now();
    let rep = oracles::gradient_certification(20, 1);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        rep.instances == 60 && rep.max_rel_err < 1e-4 && secs < 30.0,
        format!("{} instances, {} partials, max rel err {:.2e} (< 1e-4), {secs:.1}s (< 30s)", rep.instances, rep.checked, rep.max_rel_err),
    )
}

fn reduction() -> Verdict {
    let (trainer, plain) = oracles::reduction(100);
    let same = trainer.len() == plain.len() && trainer.iter().zip(&plain).all(|(a, b)| a.to_bits() == b.to_bits());
    let differing = trainer.iter().zip(&plain).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    verdict(same, format!("{} parameters after 100 updates, {differing} differ bitwise", trainer.len()))
}

fn kfac_equivalence() -> Verdict {
    let rep = oracles::kfac_oracle(40, 2);
    let quad = oracles::quadratic_one_step(50, 4);
    let pass = rep.max_solve_err < 1e-8 && rep.max_psd_shift <= 1e-10 && quad < 1e-8 && rep.max_quadratic_residual < 1e-8;
    verdict(
        pass,
        format!(
            "{} layers: solve rel err {:.2e} (< 1e-8), PSD shift {:.1e} (<= 1e-10), damped-quadratic residual {:.2e}, undamped one-step error {:.2e} (< 1e-8)",
            rep.layers, rep.max_solve_err, rep.max_psd_shift, rep.max_quadratic_residual, quad
        ),
    )
}

fn returns_oracle() -> Verdict {
    let rep = oracles::returns_oracle(1000, 3);
    verdict(
        rep.instances == 1000 && rep.with_mid_terminal > 0 && rep.max_abs_err <= 1e-12,
        format!("{} instances ({} with mid-window terminals), max abs err {:.2e} (<= 1e-12)", rep.instances, rep.with_mid_terminal, rep.max_abs_err),
    )
}

/// Steps to solve of each expert-augmented seed, shared with criterion 6.
fn sparse_maze_contrast(expert_steps: &mut Vec<Option<u64>>) -> Verdict {
    let spec = layouts::sparse_maze();
    let mut lines = Vec::new();
    let mut pass = true;
    let mut slowest: f64 = 0.0;
    for seed in SEEDS {
        let cfg = TrainConfig { lambda_expert: 0.0, ..sparse_config(seed) };
        let (out, secs) = run(&cfg, &spec, None, false);
        slowest = slowest.max(secs);
        let rate = out.final_greedy.success_rate;
        pass &= rate < 0.05 && out.env_steps() >= cfg.total_env_steps;
        lines.push(format!("plain seed {seed}: greedy success {rate:.2} after {} steps", out.env_steps()));
    }
    for seed in SEEDS {
        let cfg = sparse_config(seed);
        let (out, secs) = run(&cfg, &spec, Some(sparse_expert(cfg.gamma)), true);
        slowest = slowest.max(secs);
        let solved = out.steps_to_solve.filter(|&s| s <= cfg.total_env_steps);
        pass &= solved.is_some();
        expert_steps.push(solved);
        lines.push(format!("expert seed {seed}: >= 95% greedy success at {}", solved.map_or("never".into(), |s| format!("{s} steps"))));
    }
    pass &= slowest <= 15.0 * 60.0;
    lines.push(format!("slowest run {slowest:.0}s (<= 900s)"));
    verdict(pass, lines.join("; "))
}

fn median_steps(steps: &[Option<u64>]) -> Option<f64> {
    let solved: Vec<f64> = steps.iter().map(|s| s.map_or(f64::INFINITY, |v| v as f64)).collect();
    let m = mean_median(solved).1;
    m.is_finite().then_some(m)
}

fn curriculum(expert_steps: &[Option<u64>]) -> Verdict {
    let spec = layouts::sparse_maze();
    let mut steps = Vec::new();
    let mut lines = Vec::new();
    for seed in SEEDS {
        let cfg = TrainConfig { lambda_expert: 0.0, curriculum: true, total_env_steps: CURRICULUM_BUDGET, eval_every: 25, ..sparse_config(seed) };
        let (out, secs) = run(&cfg, &spec, None, true);
        lines.push(format!("curriculum seed {seed}: {} ({secs:.0}s)", out.steps_to_solve.map_or("not solved".into(), |s| format!("solved at {s} steps"))));
        steps.push(out.steps_to_solve);
    }
    let (cur, exp) = (median_steps(&steps), median_steps(expert_steps));
    let slower = matches!((cur, exp), (Some(c), Some(e)) if c > e);
    lines.push(format!("median steps to solve (unsolved counts as never) curriculum {} vs expert {}", fmt_opt(cur), fmt_opt(exp)));
    verdict(slower, lines.join("; "))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.0}"))
}

fn accuracy_monotone() -> Verdict {
    let spec = layouts::mini_montezuma();
    let base = TrainConfig { total_env_steps: ACCURACY_STEPS, ..montezuma_config(0) };
    let ds = montezuma_dataset(0.0, 0, base.gamma);
    let sweep = SweepSpec { base, axis: Axis::LambdaExpert, values: vec!["0.125".into(), "0.5".into(), "2.0".into()], seeds: SEEDS.to_vec() };
    let root = tmp();
    let report = run_sweep(&sweep, &spec, Some(&ds), root.path()).expect("sweep");
    let medians: Vec<Option<f64>> = sweep.values.iter().map(|v| report.median_expert_accuracy(v)).collect();
    let ok = report.failures.is_empty()
        && medians.iter().all(Option::is_some)
        && medians.windows(2).all(|w| w[0].unwrap_or(f64::NAN) <= w[1].unwrap_or(f64::NAN));
    let shown: Vec<String> = sweep.values.iter().zip(&medians).map(|(v, m)| format!("lambda {v}: {}", m.map_or("failed".into(), |x| format!("{x:.3}")))).collect();
    verdict(ok, format!("median final expert accuracy after {ACCURACY_STEPS} steps: {}", shown.join(", ")))
}

fn surpass_expert() -> Verdict {
    let spec = layouts::mini_montezuma();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let cfg = montezuma_config(seed);
        let ds = montezuma_dataset(MONTEZUMA_NOISE, seed, cfg.gamma);
        let (out, _) = run(&cfg, &spec, Some(ds.clone()), false);
        let greedy = evaluate(&out.net, &spec, cfg.eval_episodes, PolicyMode::Greedy, seed).expect("evaluation").mean;
        if greedy >= ds.mean_score() {
            wins += 1;
        }
        lines.push(format!("seed {seed}: agent {greedy:.1} vs dataset {:.1}", ds.mean_score()));
    }
    verdict(wins >= 2, format!("{wins}/3 seeds at or above their dataset mean; {}", lines.join(", ")))
}

/// Mean score over `EPISODES_PER_START` sampled-action episodes from each
/// perturbed start, and the greedy mean for reference.
fn perturbed_scores(net: &PolicyNet, spec: &EnvSpec) -> (f64, f64) {
    let starts = perturbed_starts(spec, PERTURBED_STARTS);
    let repeated: Vec<_> = starts.iter().flat_map(|s| std::iter::repeat_n(*s, EPISODES_PER_START)).collect();
    let stochastic = evaluate_from(net, spec, &repeated, PolicyMode::Stochastic, 0).expect("evaluation").mean;
    let greedy = evaluate_from(net, spec, &starts, PolicyMode::Greedy, 0).expect("evaluation").mean;
    (stochastic, greedy)
}

fn bc_contrast() -> Verdict {
    let spec = layouts::mini_montezuma();
    let cfg = TrainConfig { curriculum: true, total_env_steps: MONTEZUMA_RESPAWN_STEPS, ..montezuma_config(0) };
    let ds = montezuma_dataset(MONTEZUMA_NOISE, 0, cfg.gamma);
    let (agent, _) = run(&cfg, &spec, Some(ds.clone()), false);
    let net = PolicyNet::new(spec.obs_dim(), &cfg.hidden(), spec.action_count(), cfg.seed);
    let (bc, log) = bc_train(net, &ds, BC_STEPS, BC_LR).expect("behavioral cloning");
    let (agent_score, agent_greedy) = perturbed_scores(&agent.net, &spec);
    let (bc_score, bc_greedy) = perturbed_scores(&bc, &spec);
    let canonical = evaluate(&bc, &spec, 1, PolicyMode::Greedy, 0).expect("evaluation").mean;
    verdict(
        bc_score < 0.5 * agent_score,
        format!(
            "{PERTURBED_STARTS} perturbed starts x {EPISODES_PER_START} episodes: BC {bc_score:.1} vs agent {agent_score:.1} (threshold {:.1}); greedy BC {bc_greedy:.1}, agent {agent_greedy:.1}; BC training accuracy {:.3}, BC greedy score from the start {canonical:.0}",
            0.5 * agent_score,
            log.last().map_or(0.0, |m| m.accuracy),
        ),
    )
}

// ---------------------------------------------------------------------------
// Determinism through the command-line binary.

fn eaktr(root: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_eaktr")).args(args).env("EAKTR_OUT", root).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("eaktr {} exited with {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

/// Every file under `dir` except wall-clock timing logs, with its contents.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable directory") {
            let p = e.expect("directory entry").path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "timing.csv") {
                out.push((p.strip_prefix(dir).expect("inside").to_path_buf(), std::fs::read(&p).expect("readable file")));
            }
        }
    }
    out.sort();
    out
}

fn invocations(root: &Path) -> Result<(), String> {
    let s = |p: &Path| p.to_str().expect("utf-8 path").to_string();
    let expert = root.join("gen").join("expert.traj");
    let train = root.join("train");
    let small = ["--env", "tiny-maze", "--total-env-steps", "1920", "--eval-every", "2", "--eval-episodes", "2", "--hidden-units", "16", "--seed", "3"];
    eaktr(root, &["gen-expert", "--env", "tiny-maze", "--count", "2", "--noise", "0.2", "--seed", "3", "--out", &s(&root.join("gen"))])?;
    let expert_s = s(&expert);
    let train_s = s(&train);
    let mut args = vec!["train", "--expert", &expert_s];
    args.extend(small);
    args.extend(["--out", &train_s]);
    eaktr(root, &args)?;
    let ckpt = s(&train.join("policy.ckpt"));
    eaktr(root, &["eval", "--env", "tiny-maze", "--checkpoint", &ckpt, "--episodes", "4", "--mode", "stochastic", "--seed", "5", "--out", &s(&root.join("eval"))])?;
    let mut args = vec!["sweep", "--axis", "lambda_expert", "--values", "0,0.5", "--seeds", "0,1", "--expert"];
    let sweep_s = s(&root.join("sweep"));
    args.push(&expert_s);
    args.extend(small);
    args.extend(["--out", &sweep_s]);
    eaktr(root, &args)
}

fn determinism() -> Verdict {
    let t = tmp();
    let (root, first) = (t.path().join("run"), t.path().join("first"));
    let repeated = invocations(&root)
        .and_then(|_| std::fs::rename(&root, &first).map_err(|e| e.to_string()))
        .and_then(|_| invocations(&root));
    if let Err(e) = repeated {
        return verdict(false, e);
    }
    let (sa, sb) = (snapshot(&first), snapshot(&root));
    let differing: Vec<String> = sa.iter().zip(&sb).filter(|(x, y)| x != y).map(|(x, _)| x.0.display().to_string()).collect();
    let has = |name: &str| sa.iter().any(|(p, _)| p.file_name().is_some_and(|n| n == name));
    let pass = sa.len() == sb.len() && differing.is_empty() && has("metrics.csv") && has("policy.ckpt") && has("summary.csv") && has("eval.csv");
    verdict(pass, format!("train, eval and sweep run twice: {} files compared, {} differ {differing:?}", sa.len(), sa.len().abs_diff(sb.len()) + differing.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let selected: Option<Vec<u32>> = std::env::var("EAKTR_CRITERIA").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: u32| selected.as_ref().is_none_or(|s| s.contains(&n));
    let mut expert_steps = Vec::new();
    let mut failed = 0;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Verdict| {
        if !wanted(n) {
            return;
        }
        let t = Instant::now();
        let v = f();
        if !v.pass {
            failed += 1;
        }
        println!("criterion {n:>2} {}: {name}: {} [{:.0}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail, t.elapsed().as_secs_f64());
    };
    report(1, "gradient certification", &mut gradient_certification);
    report(2, "reduction to ACKTR", &mut reduction);
    report(3, "K-FAC oracle equivalence", &mut kfac_equivalence);
    report(4, "return oracle", &mut returns_oracle);
    report(5, "SparseMaze plain vs expert-augmented", &mut || sparse_maze_contrast(&mut expert_steps));
    report(6, "SparseMaze respawn curriculum", &mut || {
        if expert_steps.is_empty() {
            let mut s = Vec::new();
            for seed in SEEDS {
                let cfg = sparse_config(seed);
                s.push(run(&cfg, &layouts::sparse_maze(), Some(sparse_expert(cfg.gamma)), true).0.steps_to_solve);
            }
            expert_steps = s;
        }
        curriculum(&expert_steps)
    });
    report(7, "expert accuracy vs lambda on MiniMontezuma", &mut accuracy_monotone);
    report(8, "surpassing noisy experts on MiniMontezuma", &mut surpass_expert);
    report(9, "behavioral cloning from perturbed starts", &mut bc_contrast);
    report(10, "determinism of train/eval/sweep", &mut determinism);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
