use std::path::{Path, PathBuf};

use eaktr::checkpoint::{load_fisher, load_policy, save_fisher, save_policy, CheckpointMeta};
use eaktr::config::{load_config, parse_config, save_config, to_config_string};
use eaktr::gridfile::{load_grid, parse_grid, resolve_env, to_grid_string};
use eaktr::trajfile::{load_dataset, parse_dataset, save_dataset, to_traj_string};
use eaktr::Error;
use eaktr_core::env::layouts;
use eaktr_core::expert::{generate_dataset, ExpertDataset, Trajectory};
use eaktr_core::kfac::FisherState;
use eaktr_core::policy::PolicyNet;
use eaktr_core::trainer::TrainConfig;

fn specs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("specs")
}

#[test]
fn shipped_grid_files_match_builtin_layouts() {
    for spec in [layouts::sparse_maze(), layouts::mini_montezuma(), layouts::tiny_maze()] {
        let path = specs_dir().join(format!("{}.grid", spec.env_id));
        if std::env::var_os("EAKTR_BLESS").is_some() {
            std::fs::write(&path, to_grid_string(&spec)).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, to_grid_string(&spec), "{}", path.display());
        let loaded = load_grid(&path).unwrap();
        assert_eq!(loaded.grid_lines(), spec.grid_lines());
        assert_eq!(loaded.reachability(), spec.reachability());
        assert_eq!(resolve_env(path.to_str().unwrap()).unwrap().env_id, spec.env_id);
    }
}

#[test]
fn unreachable_goal_is_rejected_with_location() {
    let text = "env_id=walled\nstep_limit=10\nactions=forward,turn-left,turn-right\nreward.goal=1\nreward.key=0\nreward.door=0\nheading=E\nrespawn_curriculum=false\n\n#####\n#S#G#\n#####\n";
    assert!(parse_grid(text, Path::new("walled.grid")).is_err());
    let bad_key = text.replace("step_limit", "steplimit");
    let err = parse_grid(&bad_key, Path::new("walled.grid")).unwrap_err().to_string();
    assert!(err.contains("walled.grid") && err.contains('2'), "{err}");
}

#[test]
fn unknown_env_name_is_invalid() {
    assert!(matches!(resolve_env("no-such-env"), Err(Error::Invalid(_))));
}

fn one_episode(rewards: &[f64]) -> ExpertDataset {
    let spec = layouts::tiny_maze();
    let frame = spec.frame(&spec.start_state());
    let n = rewards.len();
    let t = Trajectory {
        frames: vec![frame; n],
        actions: vec![0; n],
        rewards: rewards.to_vec(),
        dones: (0..n).map(|i| i + 1 == n).collect(),
    };
    ExpertDataset::new("tiny-maze", vec![t], 0.5).unwrap()
}

#[test]
fn reward_to_go_is_recomputed_for_the_load_gamma() {
    let ds = one_episode(&[1.0, 0.0, 2.0]);
    let text = to_traj_string(&ds);
    let back = parse_dataset(&text, Path::new("x"), 0.5).unwrap();
    assert_eq!(rtg(&back), vec![1.5, 1.0, 2.0]);
    let other = parse_dataset(&text, Path::new("x"), 1.0).unwrap();
    assert_eq!(rtg(&other), vec![3.0, 2.0, 2.0]);
}

#[test]
fn trajectory_file_round_trip_and_env_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("expert.traj");
    let spec = layouts::sparse_maze();
    let ds = generate_dataset(&spec, 2, 0.1, 5, 0.99).unwrap();
    save_dataset(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path, &spec, 0.99).unwrap(), ds);
    let err = load_dataset(&path, &layouts::tiny_maze(), 0.99).unwrap_err().to_string();
    assert!(err.contains("sparse-maze"), "{err}");
}

#[test]
fn corrupted_trajectory_body_fails_checksum() {
    let ds = generate_dataset(&layouts::tiny_maze(), 1, 0.0, 0, 0.99).unwrap();
    let text = to_traj_string(&ds);
    let last_tab = text.rfind('\t').unwrap();
    let mut bytes = text.into_bytes();
    bytes[last_tab - 1] = if bytes[last_tab - 1] == b'1' { b'0' } else { b'1' };
    let corrupted = String::from_utf8(bytes).unwrap();
    assert!(matches!(parse_dataset(&corrupted, Path::new("t"), 0.99), Err(Error::Checksum { .. })));
}

#[test]
fn checkpoints_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let spec = layouts::tiny_maze();
    let net = PolicyNet::new(spec.obs_dim(), &[8, 8], spec.action_count(), 3);
    let fisher = FisherState::new(&net, Default::default());
    let meta = CheckpointMeta { seed: 3, env_steps: 640, updates: 2 };
    let (p, f) = (dir.path().join("policy.ckpt"), dir.path().join("fisher.ckpt"));
    save_policy(&net, meta, &p).unwrap();
    save_fisher(&fisher, meta, &f).unwrap();
    let (net2, meta2) = load_policy(&p).unwrap();
    let (fisher2, meta3) = load_fisher(&f).unwrap();
    assert_eq!(net2, net);
    assert_eq!(fisher2, fisher);
    assert_eq!((meta2, meta3), (meta, meta));
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
    assert!(load_policy(&p).is_err());
}

#[test]
fn config_snapshot_round_trips_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.txt");
    let mut cfg = TrainConfig::default();
    cfg.gamma = 0.995;
    cfg.lambda_expert = 0.125;
    cfg.expert_path = Some("runs/gen-expert/expert.traj".into());
    cfg.curriculum = true;
    cfg.kfac.damping = 0.02;
    cfg.trust.delta_kl = 0.003;
    save_config(&cfg, &path).unwrap();
    let back = load_config(&path, TrainConfig::default()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(to_config_string(&back), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn config_errors_name_the_line() {
    let err = parse_config("# c\nseed=1\ngamma=abc\n", Path::new("c.txt"), TrainConfig::default()).unwrap_err().to_string();
    assert!(err.contains("c.txt") && err.contains('3'), "{err}");
    assert!(parse_config("seed=1\nseed=2\n", Path::new("c.txt"), TrainConfig::default()).is_err());
    assert!(parse_config("colour=red\n", Path::new("c.txt"), TrainConfig::default()).is_err());
}

fn rtg(ds: &ExpertDataset) -> Vec<f64> {
    ds.steps.iter().map(|s| s.reward_to_go).collect()
}

#[test]
fn shipped_configs_load_over_defaults() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for (file, env) in [("sparse-maze.txt", layouts::SPARSE_MAZE_ID), ("mini-montezuma.txt", layouts::MINI_MONTEZUMA_ID)] {
        let cfg = load_config(&dir.join(file), TrainConfig::default()).unwrap();
        assert_eq!(cfg.env_id, env);
        assert_eq!((cfg.n_actors, cfg.base_lr, cfg.kfac.damping), (64, 0.25, 1e-4));
        assert_eq!(cfg.horizon, TrainConfig::default().horizon);
        cfg.validate().unwrap();
    }
}
