//! Flat `key=value` run configuration. Keys are the [`TrainConfig`] field
//! names; `#` starts a comment line; an empty `expert_path` means none.

use std::fmt::Write as _;
use std::path::Path;

use eaktr_core::trainer::TrainConfig;

use crate::error::{format_err, io_err, Error, Result};

pub const KEYS: [&str; 23] = [
    "env_id",
    "seed",
    "gamma",
    "lambda_expert",
    "expert_k",
    "horizon",
    "n_actors",
    "base_lr",
    "beta_entropy",
    "advantage",
    "total_env_steps",
    "eval_every",
    "eval_episodes",
    "expert_path",
    "expert_trajectories",
    "curriculum",
    "hidden_units",
    "hidden_layers",
    "kfac_ema_decay",
    "kfac_damping",
    "kfac_refresh_interval",
    "delta_kl",
    "max_lr",
];

/// Sets one field from its textual form.
pub fn set_field(cfg: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn p<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
        v.trim().parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
    }
    match key {
        "env_id" => cfg.env_id = value.to_string(),
        "seed" => cfg.seed = p(key, value)?,
        "gamma" => cfg.gamma = p(key, value)?,
        "lambda_expert" => cfg.lambda_expert = p(key, value)?,
        "expert_k" => cfg.expert_k = p(key, value)?,
        "horizon" => cfg.horizon = p(key, value)?,
        "n_actors" => cfg.n_actors = p(key, value)?,
        "base_lr" => cfg.base_lr = p(key, value)?,
        "beta_entropy" => cfg.beta_entropy = p(key, value)?,
        "advantage" => cfg.advantage = value.trim().parse().map_err(|_| format!("advantage: expected reward, critic or simple, got {value:?}"))?,
        "total_env_steps" => cfg.total_env_steps = p(key, value)?,
        "eval_every" => cfg.eval_every = p(key, value)?,
        "eval_episodes" => cfg.eval_episodes = p(key, value)?,
        "expert_path" => cfg.expert_path = Some(value.to_string()).filter(|s| !s.is_empty()),
        "expert_trajectories" => cfg.expert_trajectories = p(key, value)?,
        "curriculum" => cfg.curriculum = p(key, value)?,
        "hidden_units" => cfg.hidden_units = p(key, value)?,
        "hidden_layers" => cfg.hidden_layers = p(key, value)?,
        "kfac_ema_decay" => cfg.kfac.ema_decay = p(key, value)?,
        "kfac_damping" => cfg.kfac.damping = p(key, value)?,
        "kfac_refresh_interval" => cfg.kfac.refresh_interval = p(key, value)?,
        "delta_kl" => cfg.trust.delta_kl = p(key, value)?,
        "max_lr" => cfg.trust.max_lr = p(key, value)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

pub fn get_field(cfg: &TrainConfig, key: &str) -> Option<String> {
    Some(match key {
        "env_id" => cfg.env_id.clone(),
        "seed" => cfg.seed.to_string(),
        "gamma" => cfg.gamma.to_string(),
        "lambda_expert" => cfg.lambda_expert.to_string(),
        "expert_k" => cfg.expert_k.to_string(),
        "horizon" => cfg.horizon.to_string(),
        "n_actors" => cfg.n_actors.to_string(),
        "base_lr" => cfg.base_lr.to_string(),
        "beta_entropy" => cfg.beta_entropy.to_string(),
        "advantage" => cfg.advantage.to_string(),
        "total_env_steps" => cfg.total_env_steps.to_string(),
        "eval_every" => cfg.eval_every.to_string(),
        "eval_episodes" => cfg.eval_episodes.to_string(),
        "expert_path" => cfg.expert_path.clone().unwrap_or_default(),
        "expert_trajectories" => cfg.expert_trajectories.to_string(),
        "curriculum" => cfg.curriculum.to_string(),
        "hidden_units" => cfg.hidden_units.to_string(),
        "hidden_layers" => cfg.hidden_layers.to_string(),
        "kfac_ema_decay" => cfg.kfac.ema_decay.to_string(),
        "kfac_damping" => cfg.kfac.damping.to_string(),
        "kfac_refresh_interval" => cfg.kfac.refresh_interval.to_string(),
        "delta_kl" => cfg.trust.delta_kl.to_string(),
        "max_lr" => cfg.trust.max_lr.to_string(),
        _ => return None,
    })
}

pub fn to_config_string(cfg: &TrainConfig) -> String {
    let mut s = String::new();
    for k in KEYS {
        let _ = writeln!(s, "{k}={}", get_field(cfg, k).expect("known key"));
    }
    s
}

/// Applies every line of `text` on top of `base`.
pub fn parse_config(text: &str, origin: &Path, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base;
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| format_err(origin, i + 1, "expected key=value"))?;
        let k = k.trim();
        if !seen.insert(k.to_string()) {
            return Err(format_err(origin, i + 1, format!("duplicate key {k:?}")));
        }
        set_field(&mut cfg, k, v.trim()).map_err(|m| format_err(origin, i + 1, m))?;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path, base: TrainConfig) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text, path, base)
}

pub fn save_config(cfg: &TrainConfig, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, to_config_string(cfg).as_bytes())
}

pub fn validate(cfg: &TrainConfig) -> Result<()> {
    cfg.validate().map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use eaktr_core::expert::AdvantageVariant;

    #[test]
    fn round_trip_every_field() {
        let mut cfg = TrainConfig { gamma: 0.995, lambda_expert: 0.125, advantage: AdvantageVariant::Reward, expert_path: Some("d/expert.traj".into()), curriculum: true, ..TrainConfig::default() };
        cfg.kfac.damping = 0.1 + 0.2;
        let text = to_config_string(&cfg);
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(parse_config(&text, Path::new("c"), TrainConfig::default()).unwrap(), cfg);
    }

    #[test]
    fn errors() {
        let base = TrainConfig::default;
        assert!(parse_config("nope=1", Path::new("c"), base()).is_err());
        assert!(parse_config("gamma=x", Path::new("c"), base()).is_err());
        assert!(parse_config("seed=1\nseed=2", Path::new("c"), base()).is_err());
        let cfg = parse_config("# c\n\nseed = 4\nexpert_path=\n", Path::new("c"), base()).unwrap();
        assert_eq!((cfg.seed, cfg.expert_path), (4, None));
    }
}
