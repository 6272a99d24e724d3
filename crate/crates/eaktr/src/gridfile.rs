//! Plain-text environment files.
//!
//! ```text
//! env_id=tiny-maze
//! step_limit=20
//! actions=forward,turn-left,turn-right
//! reward.goal=1
//! reward.key=0
//! reward.door=0
//! heading=E
//! respawn_curriculum=false
//!
//! #####
//! #S..#
//! ...
//! ```
//!
//! The header is a block of `key=value` lines ending at the first blank
//! line; every following line is one grid row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use eaktr_core::env::{layouts, ActionKind, EnvSpec, Heading, RewardTable};

use crate::error::{format_err, io_err, Error, Result};

const KEYS: [&str; 8] = ["env_id", "step_limit", "actions", "reward.goal", "reward.key", "reward.door", "heading", "respawn_curriculum"];

pub fn to_grid_string(spec: &EnvSpec) -> String {
    let mut s = String::new();
    let actions: Vec<&str> = spec.actions.iter().map(|a| a.name()).collect();
    let _ = writeln!(s, "env_id={}", spec.env_id);
    let _ = writeln!(s, "step_limit={}", spec.step_limit);
    let _ = writeln!(s, "actions={}", actions.join(","));
    let _ = writeln!(s, "reward.goal={}", spec.rewards.goal);
    let _ = writeln!(s, "reward.key={}", spec.rewards.key);
    let _ = writeln!(s, "reward.door={}", spec.rewards.door);
    let _ = writeln!(s, "heading={}", spec.start_heading.to_char());
    let _ = writeln!(s, "respawn_curriculum={}", spec.respawn_curriculum);
    s.push('\n');
    for line in spec.grid_lines() {
        s.push_str(&line);
        s.push('\n');
    }
    s
}

pub fn parse_grid(text: &str, origin: &Path) -> Result<EnvSpec> {
    let mut header = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    for (i, line) in lines.by_ref() {
        if line.trim().is_empty() {
            break;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format_err(origin, i + 1, "expected key=value"))?;
        if !KEYS.contains(&k) {
            return Err(format_err(origin, i + 1, format!("unknown key {k:?}")));
        }
        if header.insert(k, (i + 1, v)).is_some() {
            return Err(format_err(origin, i + 1, format!("duplicate key {k:?}")));
        }
    }
    let grid: Vec<&str> = lines.map(|(_, l)| l).collect();
    let get = |k: &str| header.get(k).copied().ok_or_else(|| format_err(origin, 0, format!("missing key {k:?}")));
    let num = |k: &str| -> Result<f64> {
        let (line, v) = get(k)?;
        v.parse().map_err(|_| format_err(origin, line, format!("{k}: not a number: {v:?}")))
    };
    let (_, env_id) = get("env_id")?;
    let (line, v) = get("step_limit")?;
    let step_limit: u32 = v.parse().map_err(|_| format_err(origin, line, format!("step_limit: not an integer: {v:?}")))?;
    let (line, v) = get("actions")?;
    let actions = v
        .split(',')
        .map(|a| ActionKind::from_name(a).ok_or_else(|| format_err(origin, line, format!("unknown action {a:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let rewards = RewardTable { goal: num("reward.goal")?, key: num("reward.key")?, door: num("reward.door")? };
    let (line, v) = get("heading")?;
    let mut hc = v.chars();
    let heading = match (hc.next().and_then(Heading::from_char), hc.next()) {
        (Some(h), None) => h,
        _ => return Err(format_err(origin, line, format!("heading must be one of N, E, S, W, got {v:?}"))),
    };
    let (line, v) = get("respawn_curriculum")?;
    let curriculum: bool = v.parse().map_err(|_| format_err(origin, line, format!("respawn_curriculum: expected true or false, got {v:?}")))?;
    Ok(EnvSpec::new(env_id, &grid, actions, step_limit, rewards, heading, curriculum)?)
}

pub fn load_grid(path: &Path) -> Result<EnvSpec> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_grid(&text, path)
}

pub fn save_grid(spec: &EnvSpec, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, to_grid_string(spec).as_bytes())
}

/// A built-in layout id, or a path to a grid file.
pub fn resolve_env(name: &str) -> Result<EnvSpec> {
    if let Some(spec) = layouts::by_id(name) {
        return Ok(spec);
    }
    let path = Path::new(name);
    if path.exists() {
        return load_grid(path);
    }
    Err(Error::Invalid(format!(
        "unknown environment {name:?}: expected one of {}, {}, {} or a grid file path",
        layouts::SPARSE_MAZE_ID,
        layouts::MINI_MONTEZUMA_ID,
        layouts::TINY_MAZE_ID
    )))
}
