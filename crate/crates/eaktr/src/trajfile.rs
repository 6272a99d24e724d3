//! Demonstration files.
//!
//! Five header lines (`eaktr-trajectories 1`, `env_id=`, `trajectory_count=`,
//! `frame_dim=`, `checksum=`) followed by one tab-separated line per step:
//! episode index, step index, comma-separated single frame, action id,
//! reward, done flag (0/1). The checksum is the SHA-256 of everything after
//! the header. Observation stacks are rebuilt from the frames at load time.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use eaktr_core::env::EnvSpec;
use eaktr_core::expert::{ExpertDataset, Trajectory};

use crate::error::{format_err, io_err, Error, Result};

pub const MAGIC: &str = "eaktr-trajectories 1";

fn digest(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

pub fn to_traj_string(ds: &ExpertDataset) -> String {
    let frame_dim = ds.trajectories().first().and_then(|t| t.frames.first()).map_or(0, Vec::len);
    let mut body = String::new();
    for (e, t) in ds.trajectories().iter().enumerate() {
        for i in 0..t.len() {
            let frame: Vec<String> = t.frames[i].iter().map(|v| v.to_string()).collect();
            let _ = writeln!(body, "{e}\t{i}\t{}\t{}\t{}\t{}", frame.join(","), t.actions[i], t.rewards[i], u8::from(t.dones[i]));
        }
    }
    format!(
        "{MAGIC}\nenv_id={}\ntrajectory_count={}\nframe_dim={frame_dim}\nchecksum={}\n{body}",
        ds.env_id,
        ds.trajectory_count,
        digest(&body)
    )
}

pub fn save_dataset(ds: &ExpertDataset, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, to_traj_string(ds).as_bytes())
}

/// Parses a demonstration file; `reward_to_go` is computed for `gamma`.
pub fn parse_dataset(text: &str, origin: &Path, gamma: f64) -> Result<ExpertDataset> {
    let mut header = text.splitn(6, '\n');
    let mut next_header = |line: usize, key: &str| -> Result<String> {
        let l = header.next().ok_or_else(|| format_err(origin, line, "truncated header"))?;
        if key.is_empty() {
            return if l == MAGIC { Ok(String::new()) } else { Err(format_err(origin, line, format!("expected {MAGIC:?}"))) };
        }
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| format_err(origin, line, format!("expected {key}=...")))
    };
    next_header(1, "")?;
    let env_id = next_header(2, "env_id")?;
    let count_s = next_header(3, "trajectory_count")?;
    let count: usize = count_s.parse().map_err(|_| format_err(origin, 3, "trajectory_count is not an integer"))?;
    let dim_s = next_header(4, "frame_dim")?;
    let frame_dim: usize = dim_s.parse().map_err(|_| format_err(origin, 4, "frame_dim is not an integer"))?;
    let checksum = next_header(5, "checksum")?;
    let body = header.next().unwrap_or("");
    let found = digest(body);
    if found != checksum {
        return Err(Error::Checksum { path: origin.to_path_buf(), expected: checksum, found });
    }

    let mut trajs: Vec<Trajectory> = Vec::new();
    for (i, line) in body.lines().enumerate() {
        let ln = i + 6;
        let bad = |msg: &str| format_err(origin, ln, msg);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 tab-separated fields"));
        }
        let episode: usize = f[0].parse().map_err(|_| bad("bad episode index"))?;
        let step: usize = f[1].parse().map_err(|_| bad("bad step index"))?;
        let frame = f[2].split(',').map(|v| v.parse::<f64>().map_err(|_| bad("bad frame value"))).collect::<Result<Vec<_>>>()?;
        if frame.len() != frame_dim {
            return Err(bad("frame length differs from frame_dim"));
        }
        let action: usize = f[3].parse().map_err(|_| bad("bad action id"))?;
        let reward: f64 = f[4].parse().map_err(|_| bad("bad reward"))?;
        let done = match f[5] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("done flag must be 0 or 1")),
        };
        if episode == trajs.len() && step == 0 {
            trajs.push(Trajectory { frames: Vec::new(), actions: Vec::new(), rewards: Vec::new(), dones: Vec::new() });
        }
        let n = trajs.len();
        let t = match trajs.last_mut() {
            Some(t) if episode + 1 == n && step == t.len() => t,
            _ => return Err(bad("episode/step indices out of sequence")),
        };
        t.frames.push(frame);
        t.actions.push(action);
        t.rewards.push(reward);
        t.dones.push(done);
    }
    if trajs.len() != count {
        return Err(format_err(origin, 3, format!("header announces {count} trajectories, file holds {}", trajs.len())));
    }
    Ok(ExpertDataset::new(&env_id, trajs, gamma)?)
}

/// Loads a file, checks it belongs to `spec` and replays every trajectory.
pub fn load_dataset(path: &Path, spec: &EnvSpec, gamma: f64) -> Result<ExpertDataset> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let ds = parse_dataset(&text, path, gamma)?;
    ds.check_env(spec)?;
    if ds.trajectories().first().is_some_and(|t| t.frames[0].len() != spec.frame_dim()) {
        return Err(Error::Invalid(format!("{}: frame_dim does not match environment {}", path.display(), spec.env_id)));
    }
    ds.validate_replay(spec)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use eaktr_core::env::layouts;
    use eaktr_core::expert::generate_dataset;

    #[test]
    fn text_round_trip() {
        let spec = layouts::mini_montezuma();
        let ds = generate_dataset(&spec, 2, 0.15, 3, 0.99).unwrap();
        let text = to_traj_string(&ds);
        let back = parse_dataset(&text, Path::new("m"), 0.99).unwrap();
        assert_eq!(back, ds);
        assert_eq!(to_traj_string(&back), text);
    }

    #[test]
    fn truncation_is_rejected() {
        let ds = generate_dataset(&layouts::tiny_maze(), 1, 0.0, 0, 0.9).unwrap();
        let text = to_traj_string(&ds);
        for cut in [10, text.len() / 2, text.len() - 3] {
            assert!(parse_dataset(&text[..cut], Path::new("t"), 0.9).is_err());
        }
    }
}
