//! CSV logs.
//!
//! `metrics.csv`, one row per update:
//! `update,env_steps,episodes,mean_reward,median_reward,policy_loss,value_loss,entropy,expert_accuracy,expert_loss,eta`.
//! Rewards are over the last 100 completed training episodes.
//!
//! `eval.csv`, one row per evaluation and policy mode:
//! `update,env_steps,mode,episodes,mean,median,min,max,success_rate`.
//!
//! `timing.csv`: `update,wall_clock` (seconds since the run started), kept
//! apart so the other logs are reproducible byte for byte.

use std::fs::File;
use std::path::{Path, PathBuf};

use eaktr_core::eval::{EvalReport, PolicyMode};
use eaktr_core::trainer::TrainMetrics;

use crate::error::{io_err, Error, Result};

pub const METRICS_COLUMNS: [&str; 11] =
    ["update", "env_steps", "episodes", "mean_reward", "median_reward", "policy_loss", "value_loss", "entropy", "expert_accuracy", "expert_loss", "eta"];
pub const EVAL_COLUMNS: [&str; 9] = ["update", "env_steps", "mode", "episodes", "mean", "median", "min", "max", "success_rate"];
pub const TIMING_COLUMNS: [&str; 2] = ["update", "wall_clock"];

/// Append-only CSV writer that flushes after every row.
pub struct CsvLog {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl CsvLog {
    pub fn create(path: &Path, columns: &[&str]) -> Result<CsvLog> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut log = CsvLog { path: path.to_path_buf(), inner: csv::Writer::from_writer(file) };
        log.row(columns.iter().map(|s| s.to_string()))?;
        Ok(log)
    }

    pub fn row(&mut self, fields: impl IntoIterator<Item = String>) -> Result<()> {
        let csv_err = |source| Error::Csv { path: self.path.clone(), source };
        self.inner.write_record(fields.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
        self.inner.flush().map_err(io_err(&self.path))
    }
}

pub fn metrics_fields(m: &TrainMetrics) -> Vec<String> {
    vec![
        m.update.to_string(),
        m.env_steps.to_string(),
        m.episodes.to_string(),
        m.mean_reward.to_string(),
        m.median_reward.to_string(),
        m.policy_loss.to_string(),
        m.value_loss.to_string(),
        m.entropy.to_string(),
        m.expert_accuracy.to_string(),
        m.expert_loss.to_string(),
        m.eta.to_string(),
    ]
}

pub fn eval_fields(update: u64, env_steps: u64, r: &EvalReport) -> Vec<String> {
    vec![
        update.to_string(),
        env_steps.to_string(),
        r.policy_mode.to_string(),
        r.episodes.to_string(),
        r.mean.to_string(),
        r.median.to_string(),
        r.min.to_string(),
        r.max.to_string(),
        r.success_rate.to_string(),
    ]
}

fn read_rows(path: &Path, columns: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(columns.iter().copied()) {
        return Err(Error::Invalid(format!("{}: expected columns {}", path.display(), columns.join(","))));
    }
    rdr.records().collect::<std::result::Result<Vec<_>, _>>().map_err(csv_err)
}

fn field<T: std::str::FromStr>(path: &Path, row: usize, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| crate::error::format_err(path, row + 2, format!("bad value in column {}", i + 1)))
}

pub fn read_metrics(path: &Path) -> Result<Vec<TrainMetrics>> {
    let rows = read_rows(path, &METRICS_COLUMNS)?;
    rows.iter()
        .enumerate()
        .map(|(r, rec)| {
            Ok(TrainMetrics {
                update: field(path, r, rec, 0)?,
                env_steps: field(path, r, rec, 1)?,
                episodes: field(path, r, rec, 2)?,
                mean_reward: field(path, r, rec, 3)?,
                median_reward: field(path, r, rec, 4)?,
                policy_loss: field(path, r, rec, 5)?,
                value_loss: field(path, r, rec, 6)?,
                entropy: field(path, r, rec, 7)?,
                expert_accuracy: field(path, r, rec, 8)?,
                expert_loss: field(path, r, rec, 9)?,
                eta: field(path, r, rec, 10)?,
                wall_clock: 0.0,
            })
        })
        .collect()
}

/// One `eval.csv` row; per-episode rewards are not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub update: u64,
    pub env_steps: u64,
    pub mode: PolicyMode,
    pub episodes: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub success_rate: f64,
}

impl EvalRow {
    pub fn new(update: u64, env_steps: u64, r: &EvalReport) -> EvalRow {
        EvalRow {
            update,
            env_steps,
            mode: r.policy_mode,
            episodes: r.episodes,
            mean: r.mean,
            median: r.median,
            min: r.min,
            max: r.max,
            success_rate: r.success_rate,
        }
    }
}

pub fn read_eval(path: &Path) -> Result<Vec<EvalRow>> {
    let rows = read_rows(path, &EVAL_COLUMNS)?;
    rows.iter()
        .enumerate()
        .map(|(r, rec)| {
            let mode: String = field(path, r, rec, 2)?;
            Ok(EvalRow {
                update: field(path, r, rec, 0)?,
                env_steps: field(path, r, rec, 1)?,
                mode: mode.parse().map_err(|e: eaktr_core::Error| Error::Invalid(format!("{}: {e}", path.display())))?,
                episodes: field(path, r, rec, 3)?,
                mean: field(path, r, rec, 4)?,
                median: field(path, r, rec, 5)?,
                min: field(path, r, rec, 6)?,
                max: field(path, r, rec, 7)?,
                success_rate: field(path, r, rec, 8)?,
            })
        })
        .collect()
}

/// Writes a complete CSV file atomically.
pub fn write_csv(path: &Path, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    w.write_record(columns).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    crate::fsutil::write_atomic(path, &bytes)
}
