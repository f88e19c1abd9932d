use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

const TINY: [&str; 12] = [
    "agent.critic_hidden=[16,16]",
    "agent.policy_hidden=[16,16]",
    "agent.batch_size=32",
    "agent.updates_per_episode=2",
    "demonstrations=4",
    "offline_steps=20",
    "online_episodes=10",
    "eval_attempts=3",
    "log_every=10",
    "diagnostics.offline_every=10",
    "diagnostics.probe_pairs=16",
    "diagnostics.field_grid=4",
];

fn simplq(args: &[&str], out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_simplq"));
    cmd.args(args).arg("--out").arg(out).arg("--log").arg("warn");
    for o in TINY {
        cmd.arg("--override").arg(o);
    }
    cmd.output().expect("spawn simplq")
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn stages_run_end_to_end() {
    let dir = tempdir().unwrap();
    let run = dir.path().join("run");
    for stage in ["collect", "train-offline", "train-online"] {
        assert_ok(&simplq(&[stage, "--seed", "2"], &run));
    }
    let eval = simplq(&["evaluate", "--seed", "2", "--stage", "online", "--attempts", "4"], &run);
    assert_ok(&eval);
    let summary: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(summary["attempts"], 4);

    let none = simplq(&["diagnose", "--seed", "2"], &run);
    assert_ok(&none);
    assert!(none.stdout.is_empty());

    let diag = simplq(&["diagnose", "--seed", "2", "--which", "similarity,q_trace"], &run);
    assert_ok(&diag);
    let sim = run.join("diagnostics").join("online_similarity.csv");
    assert!(sim.exists());

    let plots = dir.path().join("plots");
    let o = Command::new(env!("CARGO_BIN_EXE_simplq"))
        .arg("plot")
        .arg(&sim)
        .arg(run.join("metrics.csv"))
        .arg("--out")
        .arg(&plots)
        .output()
        .unwrap();
    assert_ok(&o);
    assert!(plots.join("online_similarity.svg").exists());
    assert!(plots.join("metrics.svg").exists());
}

#[test]
fn config_file_and_unknown_override() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"demonstrations": 3, "seeds": [7]}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_simplq"))
        .args(["collect", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("r"))
        .output()
        .unwrap();
    assert_ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("3 demonstrations"));

    let bad = simplq(&["collect", "--override", "agent.betta=1"], &dir.path().join("r2"));
    assert_eq!(bad.status.code(), Some(3));

    std::fs::write(&cfg, r#"{"typo_key": 1}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_simplq"))
        .args(["collect", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_artifacts_are_io_errors() {
    let dir = tempdir().unwrap();
    let o = simplq(&["evaluate", "--stage", "offline"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempdir().unwrap();
    assert_ok(&simplq(&["collect"], dir.path()));
    let o = simplq(
        &["train-offline", "--override", "agent.lr=1e200", "--override", "offline_steps=200"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(dir.path().join("offline_checkpoint.partial.json").exists());
}

#[test]
fn unknown_diagnostic_exits_with_three() {
    let dir = tempdir().unwrap();
    for stage in ["collect", "train-offline"] {
        assert_ok(&simplq(&[stage], dir.path()));
    }
    let o = simplq(&["diagnose", "--stage", "offline", "--which", "sideways"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sweep_runs_every_cell() {
    let dir = tempdir().unwrap();
    let o = simplq(
        &["sweep", "--seed", "0", "--grid", "agent.n_step=1,3", "--override", "online_episodes=2"],
        dir.path(),
    );
    assert_ok(&o);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
    assert!(dir.path().join("agent.n_step_1").join("summary.csv").exists());
}
