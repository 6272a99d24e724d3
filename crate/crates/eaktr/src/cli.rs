//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
//! Runs write into `--out`, defaulting to `$EAKTR_OUT/<verb>` (or
//! `runs/<verb>` when the variable is unset).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use eaktr_core::env::EnvSpec;
use eaktr_core::eval::{evaluate, evaluate_from, perturbed_starts, PolicyMode};
use eaktr_core::expert::{bc_train, generate_dataset, ExpertDataset};
use eaktr_core::policy::PolicyNet;
use eaktr_core::trainer::TrainConfig;

use crate::checkpoint::{load_policy, save_policy, CheckpointMeta};
use crate::config::{load_config, set_field};
use crate::fsutil::{write_atomic, StagedDir};
use crate::gridfile::resolve_env;
use crate::harness::{emit_sweep_plots, read_sweep, run_sweep, Axis, SweepSpec};
use crate::metrics::{eval_fields, read_metrics, write_csv, EVAL_COLUMNS};
use crate::plot::{render, Series, SMOOTHING_WINDOW};
use crate::train::{train_into, RunOptions};
use crate::trajfile::{load_dataset, save_dataset};

pub const OUT_ENV: &str = "EAKTR_OUT";

#[derive(Parser, Debug)]
#[command(name = "eaktr", version, about = "Expert-augmented ACKTR on sparse-reward grid worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate planner demonstrations.
    GenExpert(GenExpertArgs),
    /// Train with the expert-augmented objective (plain ACKTR with --lambda-expert 0).
    Train(TrainArgs),
    /// Behavioral-cloning baseline.
    Bc(BcArgs),
    /// Evaluate a policy checkpoint.
    Eval(EvalArgs),
    /// Run a parameter sweep over several seeds.
    Sweep(SweepArgs),
    /// Render reward curves as SVG.
    Plot(PlotArgs),
    /// Check an environment and print its reachability proof.
    Validate(ValidateArgs),
}

/// Flags mirroring the configuration keys; they override `--config`.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Configuration file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in environment id or grid file.
    #[arg(long = "env")]
    env_id: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    lambda_expert: Option<String>,
    /// Expert minibatch size.
    #[arg(long)]
    expert_k: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    /// Number of parallel actors.
    #[arg(long = "actors", alias = "n-actors")]
    n_actors: Option<String>,
    #[arg(long)]
    base_lr: Option<String>,
    #[arg(long)]
    beta_entropy: Option<String>,
    #[arg(long, value_parser = ["reward", "critic", "simple"])]
    advantage: Option<String>,
    #[arg(long)]
    total_env_steps: Option<String>,
    /// Updates between evaluations and checkpoints.
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    eval_episodes: Option<String>,
    /// Demonstration file from gen-expert.
    #[arg(long = "expert", alias = "expert-path")]
    expert_path: Option<String>,
    /// Use only the first N demonstrations.
    #[arg(long)]
    expert_trajectories: Option<String>,
    /// Respawn training actors at random reachable cells.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    curriculum: Option<String>,
    #[arg(long)]
    hidden_units: Option<String>,
    #[arg(long)]
    hidden_layers: Option<String>,
    #[arg(long)]
    kfac_ema_decay: Option<String>,
    #[arg(long)]
    kfac_damping: Option<String>,
    #[arg(long)]
    kfac_refresh_interval: Option<String>,
    #[arg(long)]
    delta_kl: Option<String>,
    #[arg(long)]
    max_lr: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        let all: [(&'static str, &Option<String>); 23] = [
            ("env_id", &self.env_id),
            ("seed", &self.seed),
            ("gamma", &self.gamma),
            ("lambda_expert", &self.lambda_expert),
            ("expert_k", &self.expert_k),
            ("horizon", &self.horizon),
            ("n_actors", &self.n_actors),
            ("base_lr", &self.base_lr),
            ("beta_entropy", &self.beta_entropy),
            ("advantage", &self.advantage),
            ("total_env_steps", &self.total_env_steps),
            ("eval_every", &self.eval_every),
            ("eval_episodes", &self.eval_episodes),
            ("expert_path", &self.expert_path),
            ("expert_trajectories", &self.expert_trajectories),
            ("curriculum", &self.curriculum),
            ("hidden_units", &self.hidden_units),
            ("hidden_layers", &self.hidden_layers),
            ("kfac_ema_decay", &self.kfac_ema_decay),
            ("kfac_damping", &self.kfac_damping),
            ("kfac_refresh_interval", &self.kfac_refresh_interval),
            ("delta_kl", &self.delta_kl),
            ("max_lr", &self.max_lr),
        ];
        all.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }

    /// Defaults, then the config file, then flags.
    fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p, TrainConfig::default()).map_err(|e| CliError::Usage(e.to_string()))?,
            None => TrainConfig::default(),
        };
        for (k, v) in self.pairs() {
            set_field(&mut cfg, k, v).map_err(CliError::Usage)?;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct GenExpertArgs {
    #[arg(long = "env", default_value = "sparse-maze")]
    env_id: String,
    /// Number of demonstrations [default: 14 on mini-montezuma, 1 otherwise].
    #[arg(long)]
    count: Option<usize>,
    /// Probability of a random action at each step.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: Overrides,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BcArgs {
    #[arg(long = "env", default_value = "sparse-maze")]
    env_id: String,
    #[arg(long = "expert")]
    expert_path: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    hidden_units: usize,
    #[arg(long, default_value_t = 2)]
    hidden_layers: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long = "env", default_value = "sparse-maze")]
    env_id: String,
    /// Policy checkpoint (policy.ckpt of a train or bc run).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value = "stochastic", value_parser = ["stochastic", "greedy"])]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start one episode from each of the N open cells nearest the start.
    #[arg(long, conflicts_with = "episodes")]
    perturbed: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    cfg: Overrides,
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Sweep directory whose charts are regenerated.
    #[arg(long, conflicts_with = "metrics")]
    sweep: Option<PathBuf>,
    /// metrics.csv files, one line each.
    metrics: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Apply the moving-average window.
    #[arg(long)]
    smooth: bool,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long = "env", default_value = "sparse-maze")]
    env_id: String,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult = Result<(), CliError>;

fn out_dir(given: &Option<PathBuf>, verb: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(verb)
    })
}

fn env_or_usage(name: &str) -> Result<EnvSpec, CliError> {
    match resolve_env(name) {
        Ok(s) => Ok(s),
        Err(crate::Error::Invalid(m)) => Err(CliError::Usage(m)),
        Err(e) => Err(CliError::Runtime(e.into())),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenExpert(a) => gen_expert(a),
        Command::Train(a) => train(a),
        Command::Bc(a) => bc(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Plot(a) => plot(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\nFor more information, try '--help'.");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn gen_expert(a: GenExpertArgs) -> CliResult {
    if !(0.0..1.0).contains(&a.noise) {
        return Err(CliError::Usage(format!("--noise must lie in [0, 1), got {}", a.noise)));
    }
    let spec = env_or_usage(&a.env_id)?;
    let count = a.count.unwrap_or(if spec.env_id == eaktr_core::env::layouts::MINI_MONTEZUMA_ID { 14 } else { 1 });
    if count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let ds = generate_dataset(&spec, count, a.noise, a.seed, TrainConfig::default().gamma)?;
    let staged = StagedDir::new(&out_dir(&a.out, "gen-expert"))?;
    let snapshot = format!("env_id={}\ncount={count}\nnoise={}\nseed={}\n", a.env_id, a.noise, a.seed);
    write_atomic(&staged.path().join("gen-expert.txt"), snapshot.as_bytes())?;
    save_dataset(&ds, &staged.path().join("expert.traj"))?;
    let dir = staged.commit()?;
    println!("wrote {} demonstrations ({} steps, mean score {}) to {}", ds.trajectory_count, ds.len(), ds.mean_score(), dir.join("expert.traj").display());
    Ok(())
}

fn load_expert(cfg: &TrainConfig, spec: &EnvSpec, needed: bool) -> Result<Option<ExpertDataset>, CliError> {
    match &cfg.expert_path {
        Some(p) => Ok(Some(load_dataset(Path::new(p), spec, cfg.gamma)?)),
        None if needed => Err(CliError::Usage(format!(
            "missing --expert: lambda_expert is {} but no expert trajectory file was given (generate one with gen-expert, or pass --lambda-expert 0)",
            cfg.lambda_expert
        ))),
        None => Ok(None),
    }
}

fn train(a: TrainArgs) -> CliResult {
    let mut cfg = a.cfg.resolve()?;
    let spec = env_or_usage(&cfg.env_id)?;
    cfg.curriculum |= spec.respawn_curriculum;
    let expert = load_expert(&cfg, &spec, cfg.lambda_expert > 0.0)?;
    let staged = StagedDir::new(&out_dir(&a.out, "train"))?;
    let out = train_into(&cfg, &spec, expert, staged.path(), RunOptions::default())?;
    let dir = staged.commit()?;
    let g = &out.final_greedy;
    let s = &out.final_stochastic;
    println!(
        "{} updates, {} env steps; greedy mean {} (success {}), stochastic mean {} (success {}); run in {}",
        out.metrics.len(),
        out.env_steps(),
        g.mean,
        g.success_rate,
        s.mean,
        s.success_rate,
        dir.display()
    );
    Ok(())
}

fn bc(a: BcArgs) -> CliResult {
    if a.hidden_units == 0 || !(a.lr > 0.0) {
        return Err(CliError::Usage("--hidden-units and --lr must be positive".into()));
    }
    let spec = env_or_usage(&a.env_id)?;
    let ds = load_dataset(&a.expert_path, &spec, TrainConfig::default().gamma)?;
    let staged = StagedDir::new(&out_dir(&a.out, "bc"))?;
    let snapshot = format!(
        "env_id={}\nexpert_path={}\nsteps={}\nlr={}\nseed={}\nhidden_units={}\nhidden_layers={}\n",
        a.env_id,
        a.expert_path.display(),
        a.steps,
        a.lr,
        a.seed,
        a.hidden_units,
        a.hidden_layers
    );
    write_atomic(&staged.path().join("bc.txt"), snapshot.as_bytes())?;
    let net = PolicyNet::new(spec.obs_dim(), &vec![a.hidden_units; a.hidden_layers], spec.action_count(), a.seed);
    let (net, log) = bc_train(net, &ds, a.steps, a.lr)?;
    let rows: Vec<Vec<String>> = log.iter().map(|m| vec![m.step.to_string(), m.loss.to_string(), m.accuracy.to_string()]).collect();
    write_csv(&staged.path().join("bc_metrics.csv"), &["step", "loss", "accuracy"], &rows)?;
    save_policy(&net, CheckpointMeta { seed: a.seed, env_steps: 0, updates: a.steps as u64 }, &staged.path().join("policy.ckpt"))?;
    let dir = staged.commit()?;
    let last = log.last();
    println!("{} steps, final loss {}, accuracy {}; run in {}", a.steps, last.map_or(f64::NAN, |m| m.loss), last.map_or(0.0, |m| m.accuracy), dir.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let spec = env_or_usage(&a.env_id)?;
    let mode: PolicyMode = a.mode.parse().map_err(|e: eaktr_core::Error| CliError::Usage(e.to_string()))?;
    if a.episodes == 0 {
        return Err(CliError::Usage("--episodes must be positive".into()));
    }
    let (net, _) = load_policy(&a.checkpoint)?;
    if net.input_dim() != spec.obs_dim() || net.action_count() != spec.action_count() {
        return Err(CliError::Runtime(anyhow::anyhow!("checkpoint {} does not fit environment {}", a.checkpoint.display(), spec.env_id)));
    }
    let report = match a.perturbed {
        Some(n) => {
            let starts = perturbed_starts(&spec, n);
            if starts.len() < n {
                return Err(CliError::Usage(format!("{} has only {} open cells besides the start", spec.env_id, starts.len())));
            }
            evaluate_from(&net, &spec, &starts, mode, a.seed)?
        }
        None => evaluate(&net, &spec, a.episodes, mode, a.seed)?,
    };
    let staged = StagedDir::new(&out_dir(&a.out, "eval"))?;
    let snapshot = format!(
        "env_id={}\ncheckpoint={}\nepisodes={}\nmode={}\nseed={}\nperturbed={}\n",
        a.env_id,
        a.checkpoint.display(),
        report.episodes,
        mode,
        a.seed,
        a.perturbed.unwrap_or(0)
    );
    write_atomic(&staged.path().join("eval.txt"), snapshot.as_bytes())?;
    write_csv(&staged.path().join("eval.csv"), &EVAL_COLUMNS, &[eval_fields(0, 0, &report)])?;
    let rows: Vec<Vec<String>> =
        report.rewards.iter().zip(&report.successes).enumerate().map(|(i, (r, s))| vec![i.to_string(), r.to_string(), s.to_string()]).collect();
    write_csv(&staged.path().join("episodes.csv"), &["episode", "reward", "success"], &rows)?;
    let dir = staged.commit()?;
    println!(
        "{} episodes ({mode}): mean {} median {} min {} max {} success {}; written to {}",
        report.episodes,
        report.mean,
        report.median,
        report.min,
        report.max,
        report.success_rate,
        dir.display()
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult {
    let base = a.cfg.resolve()?;
    let axis: Axis = a.axis.parse().map_err(|e: crate::Error| CliError::Usage(e.to_string()))?;
    let spec = env_or_usage(&base.env_id)?;
    let sweep = SweepSpec { base, axis, values: a.values, seeds: a.seeds };
    sweep.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let needs_expert = sweep.values.iter().any(|v| axis.apply(&sweep.base, v).is_ok_and(|c| c.lambda_expert > 0.0));
    let expert = load_expert(&sweep.base, &spec, needs_expert)?;
    let root = out_dir(&a.out, "sweep");
    let report = run_sweep(&sweep, &spec, expert.as_ref(), &root)?;
    for f in &report.failures {
        eprintln!("cell {}={} seed {} failed: {}", axis, f.value, f.seed, f.message);
    }
    println!("{} of {} cells finished; summary in {}", report.results.len(), sweep.values.len() * sweep.seeds.len(), report.summary_path.display());
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow::anyhow!("{} sweep cells failed (listed in failures.txt)", report.failures.len())))
    }
}

fn plot(a: PlotArgs) -> CliResult {
    if let Some(root) = &a.sweep {
        let sweep = read_sweep(root)?;
        emit_sweep_plots(&sweep, root)?;
        println!("charts written to {}", root.join("plots").display());
        return Ok(());
    }
    if a.metrics.is_empty() {
        return Err(CliError::Usage("give metrics.csv files or --sweep DIR".into()));
    }
    let mut series = Vec::new();
    for p in &a.metrics {
        let m = read_metrics(p)?;
        let label = p.parent().and_then(|d| d.file_name()).map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        let s = Series::from_runs(&label, &[m]);
        series.push(if a.smooth { s.smoothed(SMOOTHING_WINDOW) } else { s });
    }
    let path = a.out.clone().unwrap_or_else(|| out_dir(&None, "plot").join("rewards.svg"));
    write_atomic(&path, render("mean episode reward", "env steps", "mean episode reward", &series).as_bytes())?;
    println!("chart written to {}", path.display());
    Ok(())
}

fn validate(a: ValidateArgs) -> CliResult {
    let spec = resolve_env(&a.env_id).map_err(|e| CliError::Runtime(e.into()))?;
    let r = spec.reachability();
    println!("environment {}: {}x{} grid, {} actions, step limit {}", spec.env_id, spec.rows(), spec.cols(), spec.action_count(), spec.step_limit);
    println!("goal reachable in {} steps; best episode reward {}", r.goal_steps, r.best_reward);
    println!("{} of {} keys/doors reachable; {} states explored; {} spawn cells", r.items_reached.count_ones(), spec.items().len(), r.states_explored, r.spawn_cells);
    Ok(())
}
