//! Parameter sweeps: one training run per (value, seed) cell, a summary
//! table, and one chart per sweep.
//!
//! Layout of a sweep directory:
//!
//! ```text
//! sweep.txt            axis, values and seeds
//! config.txt           base configuration
//! cells/<value>/seed-<s>/   full run directory plus result.csv
//! summary.csv          one row per finished cell
//! aggregate.csv        one row per value
//! failures.txt         failed cells, empty when none
//! plots/<axis>.svg, plots/<axis>_smoothed.svg
//! ```
//!
//! A cell directory only appears once its run has finished, so an
//! interrupted sweep resumes by skipping every existing cell.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use eaktr_core::env::EnvSpec;
use eaktr_core::expert::{AdvantageVariant, ExpertDataset};
use eaktr_core::trainer::{mean_median, TrainConfig};

use crate::error::{io_err, Error, Result};
use crate::fsutil::{write_atomic, StagedDir};
use crate::metrics::{read_metrics, write_csv};
use crate::plot::{render, Series, SMOOTHING_WINDOW};
use crate::train::{train_into, RunOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Advantage,
    Gamma,
    LambdaExpert,
    ExpertTrajectories,
    CurriculumVsExpert,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Axis::Advantage, Axis::Gamma, Axis::LambdaExpert, Axis::ExpertTrajectories, Axis::CurriculumVsExpert];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Advantage => "advantage",
            Axis::Gamma => "gamma",
            Axis::LambdaExpert => "lambda_expert",
            Axis::ExpertTrajectories => "expert_trajectories",
            Axis::CurriculumVsExpert => "curriculum_vs_expert",
        }
    }

    /// The configuration of one cell. `curriculum_vs_expert` takes the values
    /// `curriculum` (respawn curriculum, no expert term) and `expert` (fixed
    /// start, the base `lambda_expert`).
    pub fn apply(self, base: &TrainConfig, value: &str) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        let bad = || Error::Invalid(format!("illegal value {value:?} for sweep axis {}", self.name()));
        match self {
            Axis::Advantage => cfg.advantage = value.parse::<AdvantageVariant>().map_err(|_| bad())?,
            Axis::Gamma => cfg.gamma = value.parse().map_err(|_| bad())?,
            Axis::LambdaExpert => cfg.lambda_expert = value.parse().map_err(|_| bad())?,
            Axis::ExpertTrajectories => {
                cfg.expert_trajectories = value.parse().map_err(|_| bad())?;
                if cfg.expert_trajectories == 0 {
                    return Err(bad());
                }
            }
            Axis::CurriculumVsExpert => match value {
                "curriculum" => {
                    cfg.curriculum = true;
                    cfg.lambda_expert = 0.0;
                }
                "expert" => {
                    cfg.curriculum = false;
                    if cfg.lambda_expert == 0.0 {
                        return Err(Error::Invalid("curriculum_vs_expert needs a positive base lambda_expert".into()));
                    }
                }
                _ => return Err(bad()),
            },
        }
        cfg.validate().map_err(|e| Error::Invalid(format!("sweep axis {} value {value:?}: {e}", self.name())))?;
        Ok(cfg)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Axis> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown sweep axis {s:?}; expected one of advantage, gamma, lambda_expert, expert_trajectories, curriculum_vs_expert")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: TrainConfig,
    pub axis: Axis,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// Values in reporting order: numeric order when every value is a
    /// number, otherwise as given.
    pub fn ordered_values(&self) -> Vec<String> {
        let mut v = self.values.clone();
        if v.iter().all(|x| x.parse::<f64>().is_ok()) {
            v.sort_by(|a, b| a.parse::<f64>().unwrap_or(0.0).total_cmp(&b.parse::<f64>().unwrap_or(0.0)));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Invalid("a sweep needs at least one value and one seed".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.values {
            if !seen.insert(v) || v.is_empty() || v.contains(['/', '\\']) {
                return Err(Error::Invalid(format!("sweep value {v:?} is empty, repeated or not usable as a directory name")));
            }
            self.axis.apply(&self.base, v)?;
        }
        let uniq: std::collections::BTreeSet<_> = self.seeds.iter().collect();
        if uniq.len() != self.seeds.len() {
            return Err(Error::Invalid("repeated sweep seed".into()));
        }
        Ok(())
    }

    pub fn cell_dir(&self, root: &Path, value: &str, seed: u64) -> PathBuf {
        root.join("cells").join(value).join(format!("seed-{seed}"))
    }
}

pub const SUMMARY_COLUMNS: [&str; 9] = ["axis", "value", "seed", "final_mean", "final_median", "final_min", "final_max", "expert_accuracy", "env_steps"];
pub const AGGREGATE_COLUMNS: [&str; 8] =
    ["axis", "value", "seeds", "median_final_mean", "median_final_median", "min_final_min", "max_final_max", "median_expert_accuracy"];

/// Final statistics of one cell; the reward statistics come from the last
/// stochastic-policy evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub value: String,
    pub seed: u64,
    pub final_mean: f64,
    pub final_median: f64,
    pub final_min: f64,
    pub final_max: f64,
    pub expert_accuracy: f64,
    pub env_steps: u64,
}

impl CellResult {
    fn fields(&self, axis: Axis) -> Vec<String> {
        vec![
            axis.to_string(),
            self.value.clone(),
            self.seed.to_string(),
            self.final_mean.to_string(),
            self.final_median.to_string(),
            self.final_min.to_string(),
            self.final_max.to_string(),
            self.expert_accuracy.to_string(),
            self.env_steps.to_string(),
        ]
    }

    fn read(path: &Path) -> Result<CellResult> {
        let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
        let rec = rdr.records().next().ok_or_else(|| Error::Invalid(format!("{}: empty result", path.display())))?.map_err(csv_err)?;
        let f = |i: usize| rec.get(i).unwrap_or("").to_string();
        let num = |i: usize| f(i).parse::<f64>().map_err(|_| Error::Invalid(format!("{}: bad number in column {}", path.display(), i + 1)));
        Ok(CellResult {
            value: f(1),
            seed: f(2).parse().map_err(|_| Error::Invalid(format!("{}: bad seed", path.display())))?,
            final_mean: num(3)?,
            final_median: num(4)?,
            final_min: num(5)?,
            final_max: num(6)?,
            expert_accuracy: num(7)?,
            env_steps: f(8).parse().map_err(|_| Error::Invalid(format!("{}: bad env_steps", path.display())))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellFailure {
    pub value: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub results: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    pub summary_path: PathBuf,
}

impl SweepReport {
    /// Median of the per-seed final expert accuracies for `value`.
    pub fn median_expert_accuracy(&self, value: &str) -> Option<f64> {
        let xs: Vec<f64> = self.results.iter().filter(|r| r.value == value).map(|r| r.expert_accuracy).collect();
        (!xs.is_empty()).then(|| mean_median(xs).1)
    }
}

fn sweep_text(s: &SweepSpec) -> String {
    let seeds: Vec<String> = s.seeds.iter().map(u64::to_string).collect();
    format!("axis={}\nvalues={}\nseeds={}\n", s.axis, s.values.join(","), seeds.join(","))
}

/// Runs one cell into its directory, or reads its result if it already ran.
pub fn run_cell(sweep: &SweepSpec, spec: &EnvSpec, expert: Option<&ExpertDataset>, root: &Path, value: &str, seed: u64) -> Result<CellResult> {
    let dir = sweep.cell_dir(root, value, seed);
    let result_path = dir.join("result.csv");
    if result_path.exists() {
        return CellResult::read(&result_path);
    }
    let mut cfg = sweep.axis.apply(&sweep.base, value)?;
    cfg.seed = seed;
    let staged = StagedDir::new(&dir)?;
    let expert = if cfg.lambda_expert > 0.0 { expert.cloned() } else { None };
    let out = train_into(&cfg, spec, expert, staged.path(), RunOptions::default())?;
    let r = out.final_stochastic;
    let result = CellResult {
        value: value.to_string(),
        seed,
        final_mean: r.mean,
        final_median: r.median,
        final_min: r.min,
        final_max: r.max,
        expert_accuracy: out.metrics.last().map_or(0.0, |m| m.expert_accuracy),
        env_steps: out.metrics.last().map_or(0, |m| m.env_steps),
    };
    write_csv(&staged.path().join("result.csv"), &SUMMARY_COLUMNS, &[result.fields(sweep.axis)])?;
    staged.commit()?;
    Ok(result)
}

/// Runs every missing cell, then writes the summary, aggregate and charts.
/// A failing cell is reported and skipped; the sweep itself only fails on
/// invalid input or when the output files cannot be written.
pub fn run_sweep(sweep: &SweepSpec, spec: &EnvSpec, expert: Option<&ExpertDataset>, root: &Path) -> Result<SweepReport> {
    sweep.validate()?;
    std::fs::create_dir_all(root).map_err(io_err(root))?;
    write_atomic(&root.join("sweep.txt"), sweep_text(sweep).as_bytes())?;
    crate::config::save_config(&sweep.base, &root.join("config.txt"))?;
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for value in sweep.ordered_values() {
        for &seed in &sweep.seeds {
            match run_cell(sweep, spec, expert, root, &value, seed) {
                Ok(r) => results.push(r),
                Err(e) => failures.push(CellFailure { value: value.clone(), seed, message: e.to_string() }),
            }
        }
    }
    finish(sweep, root, results, failures)
}

fn finish(sweep: &SweepSpec, root: &Path, results: Vec<CellResult>, failures: Vec<CellFailure>) -> Result<SweepReport> {
    let rows: Vec<Vec<String>> = results.iter().map(|r| r.fields(sweep.axis)).collect();
    let summary_path = root.join("summary.csv");
    write_csv(&summary_path, &SUMMARY_COLUMNS, &rows)?;

    let mut agg = Vec::new();
    for value in sweep.ordered_values() {
        let cells: Vec<&CellResult> = results.iter().filter(|r| r.value == value).collect();
        if cells.is_empty() {
            continue;
        }
        let med = |f: fn(&CellResult) -> f64| mean_median(cells.iter().map(|c| f(c)).collect()).1;
        agg.push(vec![
            sweep.axis.to_string(),
            value.clone(),
            cells.len().to_string(),
            med(|c| c.final_mean).to_string(),
            med(|c| c.final_median).to_string(),
            cells.iter().map(|c| c.final_min).fold(f64::INFINITY, f64::min).to_string(),
            cells.iter().map(|c| c.final_max).fold(f64::NEG_INFINITY, f64::max).to_string(),
            med(|c| c.expert_accuracy).to_string(),
        ]);
    }
    write_csv(&root.join("aggregate.csv"), &AGGREGATE_COLUMNS, &agg)?;

    let mut text = String::new();
    for f in &failures {
        text.push_str(&format!("{}={} seed={}: {}\n", sweep.axis, f.value, f.seed, f.message));
    }
    write_atomic(&root.join("failures.txt"), text.as_bytes())?;
    emit_sweep_plots(sweep, root)?;
    Ok(SweepReport { results, failures, summary_path })
}

/// Raw and smoothed reward-vs-steps charts of every finished cell.
pub fn emit_sweep_plots(sweep: &SweepSpec, root: &Path) -> Result<()> {
    let mut series = Vec::new();
    for value in sweep.ordered_values() {
        let mut runs = Vec::new();
        for &seed in &sweep.seeds {
            let m = sweep.cell_dir(root, &value, seed).join("metrics.csv");
            if m.exists() {
                runs.push(read_metrics(&m)?);
            }
        }
        series.push(Series::from_runs(&format!("{}={value}", sweep.axis), &runs));
    }
    let title = format!("{} sweep on {}", sweep.axis, sweep.base.env_id);
    let smoothed: Vec<Series> = series.iter().map(|s| s.smoothed(SMOOTHING_WINDOW)).collect();
    let dir = root.join("plots");
    write_atomic(&dir.join(format!("{}.svg", sweep.axis)), render(&title, "env steps", "mean episode reward", &series).as_bytes())?;
    let smooth_title = format!("{title} (window {SMOOTHING_WINDOW})");
    write_atomic(&dir.join(format!("{}_smoothed.svg", sweep.axis)), render(&smooth_title, "env steps", "mean episode reward", &smoothed).as_bytes())
}

/// Reads back the axis, values and seeds of an existing sweep directory.
pub fn read_sweep(root: &Path) -> Result<SweepSpec> {
    let path = root.join("sweep.txt");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut axis = None;
    let mut values = Vec::new();
    let mut seeds = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (k, v) = line.split_once('=').ok_or_else(|| crate::error::format_err(&path, i + 1, "expected key=value"))?;
        match k {
            "axis" => axis = Some(v.parse::<Axis>()?),
            "values" => values = v.split(',').map(str::to_string).collect(),
            "seeds" => {
                seeds = v.split(',').map(|s| s.parse().map_err(|_| crate::error::format_err(&path, i + 1, "bad seed"))).collect::<Result<_>>()?
            }
            _ => return Err(crate::error::format_err(&path, i + 1, format!("unknown key {k:?}"))),
        }
    }
    let base = crate::config::load_config(&root.join("config.txt"), TrainConfig::default())?;
    let axis = axis.ok_or_else(|| Error::Invalid(format!("{}: missing axis", path.display())))?;
    Ok(SweepSpec { base, axis, values, seeds })
}
