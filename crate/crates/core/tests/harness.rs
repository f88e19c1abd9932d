//! Pipeline, configuration, artifact and plotting behaviour.

use std::fs;
use std::path::Path;

use simplified_q::agents::{Agent, Algorithm};
use simplified_q::envs::{Demonstrator, EnvConfig, RandomBehaviour, ReacherParams};
use simplified_q::harness::*;
use simplified_q::rng::derive_seed;
use simplified_q::Error;
use tempfile::tempdir;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::default()
        .with_overrides(&[
            "agent.critic_hidden=[16,16]",
            "agent.policy_hidden=[16,16]",
            "agent.batch_size=32",
            "agent.updates_per_episode=3",
            "demonstrations=6",
            "offline_steps=40",
            "online_episodes=4",
            "eval_attempts=5",
            "log_every=10",
            "diagnostics.offline_every=20",
            "diagnostics.online_every=2",
            "diagnostics.probe_pairs=24",
            "diagnostics.field_grid=5",
        ])
        .unwrap()
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn overrides_reach_nested_keys() {
    let cfg = ExperimentConfig::default()
        .with_overrides(&["agent.beta=0", "agent.algorithm=sac_cql", "seeds=[4,5]"])
        .unwrap();
    assert_eq!(cfg.agent.beta, 0.0);
    assert_eq!(cfg.agent.algorithm, Algorithm::SacCql);
    assert_eq!(cfg.seeds, vec![4, 5]);
}

#[test]
fn overrides_can_swap_environment() {
    let cfg = ExperimentConfig::default()
        .with_overrides(&[r#"env={"name":"reacher"}"#])
        .unwrap();
    assert_eq!(cfg.env, EnvConfig::Reacher(ReacherParams::default()));
}

#[test]
fn unknown_keys_are_rejected() {
    let typo = ExperimentConfig::default().with_overrides(&["agent.btea=0"]);
    assert!(matches!(typo, Err(Error::Config(_))));
    let top = ExperimentConfig::default().with_overrides(&["offline_step=3"]);
    assert!(matches!(top, Err(Error::Config(_))));
    let missing_eq = ExperimentConfig::default().with_overrides(&["offline_steps"]);
    assert!(matches!(missing_eq, Err(Error::Config(_))));
    let json = ExperimentConfig::from_json(r#"{"offline_steps": 3, "colour": "red"}"#);
    assert!(matches!(json, Err(Error::Config(_))));
}

#[test]
fn invalid_values_are_configuration_errors() {
    for o in ["seeds=[]", "agent.gamma=1.0", "log_every=0", "agent.batch_size=7"] {
        let err = ExperimentConfig::default().with_overrides(&[o]).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{o}");
    }
}

#[test]
fn config_round_trips_through_json() {
    let cfg = tiny();
    assert_eq!(ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
}

#[test]
fn default_protocol_sizes() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.demonstrations, 50);
    assert_eq!(cfg.eval_attempts, 50);
    assert_eq!(cfg.online_episodes, 200);
    assert_eq!(cfg.seeds.len(), 3);
    assert_eq!(cfg.diagnostics.probe_pairs, 512);
    assert_eq!(cfg.diagnostics.similarity_clip, 10_000.0);
}

#[test]
fn collect_writes_successful_demonstrations_deterministically() {
    let cfg = ExperimentConfig::default();
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let (ra, rb) = (RunDir::create(a.path()).unwrap(), RunDir::create(b.path()).unwrap());
    let demos = collect(&cfg, 3, &ra).unwrap();
    collect(&cfg, 3, &rb).unwrap();
    assert_eq!(demos.len(), 50);
    assert!(demos.iter().all(|d| d.ret() > 0.0 && !d.fault));
    assert_eq!(bytes(&ra.dataset()), bytes(&rb.dataset()));
    let manifest: serde_json::Value =
        serde_json::from_slice(&bytes(&ra.dataset_manifest())).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["demonstrations"], 50);
    assert_eq!(manifest["env"]["name"], "grasp");
    assert!(ra.config().exists() && ra.stamp().exists());
}

#[test]
fn collect_reports_exhausted_retry_budget() {
    let cfg = tiny()
        .with_overrides(&["env.demo_noise=5.0", "env.horizon=3", "demo_retry_budget=2"])
        .unwrap();
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    assert!(collect(&cfg, 0, &run).is_err());
}

/// Seed-to-seed spread of the mean demonstration return stays within the
/// sampling error implied by the per-episode spread.
#[test]
fn reacher_demonstration_returns_agree_across_seeds() {
    let cfg = ExperimentConfig::default()
        .with_overrides(&[r#"env={"name":"reacher"}"#])
        .unwrap();
    let returns: Vec<Vec<f64>> = (0..3)
        .map(|seed| {
            let dir = tempdir().unwrap();
            let run = RunDir::create(dir.path()).unwrap();
            let demos = collect(&cfg, seed, &run).unwrap();
            assert_eq!(demos.len(), 50);
            demos.iter().map(|d| d.ret()).collect()
        })
        .collect();
    let pooled: Vec<f64> = returns.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let overall = pooled.iter().sum::<f64>() / n;
    let sd = (pooled.iter().map(|r| (r - overall).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let standard_error = sd / 50f64.sqrt();
    for r in &returns {
        let m = r.iter().sum::<f64>() / r.len() as f64;
        assert!((m - overall).abs() < 4.0 * standard_error, "mean {m}, overall {overall}, se {standard_error}");
    }
}

#[test]
fn offline_rejects_dataset_of_another_environment() {
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    collect(&tiny(), 0, &run).unwrap();
    let reacher = tiny().with_overrides(&[r#"env={"name":"reacher"}"#]).unwrap();
    let err = train_offline(&reacher, 0, &run).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn zero_offline_steps_keep_initialization() {
    let cfg = tiny().with_overrides(&["offline_steps=0"]).unwrap();
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    collect(&cfg, 5, &run).unwrap();
    train_offline(&cfg, 5, &run).unwrap();
    let saved = Agent::load(&run.checkpoint(Stage::Offline)).unwrap();
    let fresh = Agent::new(cfg.agent.clone(), 5, 3, derive_seed(5, 2)).unwrap();
    assert_eq!(saved.updates, 0);
    assert_eq!(saved.checksum(), fresh.checksum());
}

#[test]
fn zero_online_episodes_pass_checkpoint_through() {
    let cfg = tiny().with_overrides(&["online_episodes=0"]).unwrap();
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    collect(&cfg, 1, &run).unwrap();
    train_offline(&cfg, 1, &run).unwrap();
    let out = train_online(&cfg, 1, &run).unwrap();
    assert!(out.records.is_empty());
    let before = Agent::load(&run.checkpoint(Stage::Offline)).unwrap();
    let after = Agent::load(&run.checkpoint(Stage::Online)).unwrap();
    assert_eq!(before.checksum(), after.checksum());
}

#[test]
fn offline_training_is_reproducible() {
    let cfg = tiny();
    let finals: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempdir().unwrap();
            let run = RunDir::create(dir.path()).unwrap();
            collect(&cfg, 8, &run).unwrap();
            let out = train_offline(&cfg, 8, &run).unwrap();
            (out.last, bytes(&run.metrics()))
        })
        .collect();
    assert_eq!(finals[0], finals[1]);
}

#[test]
fn divergence_halts_with_partial_artifacts() {
    let cfg = tiny()
        .with_overrides(&["agent.lr=1e200", "offline_steps=200"])
        .unwrap();
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    collect(&cfg, 0, &run).unwrap();
    let err = train_offline(&cfg, 0, &run).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(run.partial_checkpoint(Stage::Offline).exists());
    assert!(!run.checkpoint(Stage::Offline).exists());
    assert!(run.metrics().exists());
}

#[test]
fn metrics_are_append_only_with_monotone_indices() {
    let cfg = tiny();
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    collect(&cfg, 2, &run).unwrap();
    train_offline(&cfg, 2, &run).unwrap();
    let offline_bytes = bytes(&run.metrics());
    let out = train_online(&cfg, 2, &run).unwrap();
    let all = bytes(&run.metrics());
    assert!(all.starts_with(&offline_bytes));
    let rows = read_metrics(&run.metrics()).unwrap();
    let offline: Vec<u64> = rows.iter().filter(|r| r.phase == Phase::Offline).map(|r| r.index).collect();
    let online: Vec<u64> = rows.iter().filter(|r| r.phase == Phase::Online).map(|r| r.index).collect();
    assert_eq!(offline, vec![10, 20, 30, 40]);
    assert_eq!(online, vec![0, 1, 2, 3]);
    assert!(rows.iter().filter(|r| r.phase == Phase::Online).all(|r| r.record().is_some()));
    assert_eq!(out.records.len(), 4);
    assert_eq!(out.probes.traces.len(), 3);
    assert!(run.diagnostic("online_success_curve.csv").exists());
}

#[test]
fn online_curve_has_twenty_points_for_two_hundred_episodes() {
    let cfg = tiny()
        .with_overrides(&["online_episodes=200", "agent.updates_per_episode=0", "diagnostics.online_every=0"])
        .unwrap();
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    collect(&cfg, 0, &run).unwrap();
    train_offline(&cfg, 0, &run).unwrap();
    train_online(&cfg, 0, &run).unwrap();
    let table = simplified_q::diagnostics::read_csv_table(&run.diagnostic("online_success_curve.csv")).unwrap();
    assert_eq!(table.rows.len(), 20);
}

#[test]
fn evaluation_separates_demonstrator_from_random() {
    let env = ExperimentConfig::default().env;
    let seeds = eval_seeds(0, 50);
    let (demo, rows) = evaluate_behaviour(&env, &mut Demonstrator::new(), &seeds);
    assert_eq!(rows.len(), 50);
    assert!(demo.success_rate >= 0.95, "{demo:?}");
    let (random, _) = evaluate_behaviour(&env, &mut RandomBehaviour::new(), &seeds);
    assert!(random.success_rate < 0.05, "{random:?}");
}

#[test]
fn untrained_policy_rarely_grasps() {
    let cfg = tiny()
        .with_overrides(&["offline_steps=0", "eval_attempts=50"])
        .unwrap();
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    collect(&cfg, 0, &run).unwrap();
    train_offline(&cfg, 0, &run).unwrap();
    let summary = evaluate(&cfg, 0, &run, Stage::Offline).unwrap();
    assert_eq!(summary.attempts, 50);
    assert!(summary.success_rate < 0.05, "{summary:?}");
    assert!(run.eval_rows(Stage::Offline).exists() && run.eval_summary(Stage::Offline).exists());
}

#[test]
fn bc_beats_random_policy() {
    let cfg = ExperimentConfig::default()
        .with_overrides(&["agent.algorithm=bc", "agent.batch_size=128", "offline_steps=20000", "diagnostics.offline_every=0"])
        .unwrap();
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    collect(&cfg, 0, &run).unwrap();
    train_offline(&cfg, 0, &run).unwrap();
    let bc = evaluate(&cfg, 0, &run, Stage::Offline).unwrap();
    let (random, _) = evaluate_behaviour(&cfg.env, &mut RandomBehaviour::new(), &eval_seeds(0, cfg.eval_attempts));
    assert!(bc.success_rate > random.success_rate, "bc {bc:?} random {random:?}");
}

fn trained_run(cfg: &ExperimentConfig, seed: u64) -> (tempfile::TempDir, RunDir) {
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    collect(cfg, seed, &run).unwrap();
    train_offline(cfg, seed, &run).unwrap();
    train_online(cfg, seed, &run).unwrap();
    (dir, run)
}

#[test]
fn diagnose_writes_requested_reports_and_is_pure() {
    let cfg = tiny();
    let (_dir, run) = trained_run(&cfg, 4);
    assert!(diagnose(&cfg, 4, &run, Stage::Online, &[]).unwrap().is_empty());
    let first = diagnose(&cfg, 4, &run, Stage::Online, &DiagnosticKind::ALL).unwrap();
    assert_eq!(first.len(), 4);
    let snapshot: Vec<Vec<u8>> = first.iter().map(|p| bytes(p)).collect();
    let second = diagnose(&cfg, 4, &run, Stage::Online, &DiagnosticKind::ALL).unwrap();
    assert_eq!(first, second);
    for (p, before) in second.iter().zip(&snapshot) {
        assert_eq!(&bytes(p), before, "{}", p.display());
    }
    let offline = diagnose(&cfg, 4, &run, Stage::Offline, &[DiagnosticKind::Histogram]).unwrap();
    assert!(offline[0].ends_with("offline_histogram.csv"));
}

#[test]
fn similarity_report_is_full_probe_square() {
    let cfg = tiny().with_overrides(&["diagnostics.probe_pairs=512"]).unwrap();
    let (_dir, run) = trained_run(&cfg, 0);
    let paths = diagnose(&cfg, 0, &run, Stage::Online, &[DiagnosticKind::Similarity]).unwrap();
    let table = simplified_q::diagnostics::read_csv_table(&paths[0]).unwrap();
    assert_eq!(table.headers.len(), 512);
    assert_eq!(table.rows.len(), 512);
}

#[test]
fn unknown_diagnostic_is_rejected() {
    let err = "heatmap".parse::<DiagnosticKind>().unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert_eq!("q_trace".parse::<DiagnosticKind>().unwrap(), DiagnosticKind::QTrace);
    assert!("sideways".parse::<Stage>().is_err());
}

#[test]
fn bc_has_no_critic_to_diagnose() {
    let cfg = tiny().with_overrides(&["agent.algorithm=bc"]).unwrap();
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    collect(&cfg, 0, &run).unwrap();
    train_offline(&cfg, 0, &run).unwrap();
    let err = diagnose(&cfg, 0, &run, Stage::Offline, &[DiagnosticKind::Similarity]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(diagnose(&cfg, 0, &run, Stage::Offline, &[DiagnosticKind::Histogram]).is_ok());
}

#[test]
fn plots_recognise_every_artifact() {
    let cfg = tiny().with_overrides(&["online_episodes=10"]).unwrap();
    let (_dir, run) = trained_run(&cfg, 6);
    let reports = diagnose(&cfg, 6, &run, Stage::Online, &DiagnosticKind::ALL).unwrap();
    let out = tempdir().unwrap();
    let mut cases = vec![
        (run.metrics(), PlotKind::Metrics),
        (run.diagnostic("online_success_curve.csv"), PlotKind::SuccessCurve),
        (run.diagnostic("online_similarity_summary.csv"), PlotKind::SimilaritySummary),
        (run.diagnostic("online_q_trace_log.csv"), PlotKind::QTrace),
    ];
    cases.extend(reports.into_iter().zip([
        PlotKind::Heatmap,
        PlotKind::QTrace,
        PlotKind::Histogram,
        PlotKind::Field,
    ]));
    for (i, (input, expected)) in cases.iter().enumerate() {
        let target = out.path().join(format!("{i}.svg"));
        assert_eq!(plot_csv(input, &target).unwrap(), *expected, "{}", input.display());
        let svg = fs::read_to_string(&target).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn empty_csv_is_an_empty_plot() {
    let dir = tempdir().unwrap();
    let input = dir.path().join("metrics.csv");
    fs::write(&input, METRICS_HEADER.join(",") + "\n").unwrap();
    let err = plot_csv(&input, &dir.path().join("m.svg")).unwrap_err();
    assert!(matches!(err, Error::EmptyPlot(_)), "{err}");
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempdir().unwrap();
    let input = dir.path().join("curve.csv");
    fs::write(&input, "step,probe,q,bound\n0,0,1.5,100\n0,1,oops,100\n").unwrap();
    match plot_csv(&input, &dir.path().join("c.svg")).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn full_pipeline_is_byte_identical() {
    let cfg = tiny();
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempdir().unwrap();
            let run = RunDir::create(dir.path()).unwrap();
            let summary = run_pipeline(&cfg, 9, &run).unwrap();
            (dir, run, summary)
        })
        .collect();
    let (a, b) = (&runs[0].1, &runs[1].1);
    assert_eq!(bytes(&a.metrics()), bytes(&b.metrics()));
    assert_eq!(bytes(&a.eval_rows(Stage::Online)), bytes(&b.eval_rows(Stage::Online)));
    assert_eq!(runs[0].2, runs[1].2);
    assert!(runs[0].2.online.is_some());
}

#[test]
fn bc_pipeline_skips_online_phase() {
    let cfg = tiny().with_overrides(&["agent.algorithm=bc"]).unwrap();
    let dir = tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    let summary = run_pipeline(&cfg, 0, &run).unwrap();
    assert!(summary.online.is_none() && summary.online_eval.is_none());
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn grid_expands_to_cartesian_product() {
    let cells = expand_grid(&["agent.beta=0,0.2".into(), "agent.n_step=1,3".into()]).unwrap();
    assert_eq!(cells.len(), 4);
    assert_eq!(cells[0], vec!["agent.beta=0".to_string(), "agent.n_step=1".into()]);
    assert_eq!(cells[3], vec!["agent.beta=0.2".to_string(), "agent.n_step=3".into()]);
    assert!(expand_grid(&["agent.beta".into()]).is_err());
    assert!(expand_grid(&["agent.beta=".into()]).is_err());
    assert_eq!(expand_grid(&[]).unwrap(), vec![Vec::<String>::new()]);
}

#[test]
fn sweep_writes_variant_directories() {
    let dir = tempdir().unwrap();
    let mut cfg = tiny().with_overrides(&["seeds=[0]", "online_episodes=2"]).unwrap();
    cfg.out_dir = dir.path().to_path_buf();
    let entries = sweep(&cfg, &["agent.beta=0,0.2".into()]).unwrap();
    assert_eq!(entries.len(), 2);
    for e in &entries {
        let root = dir.path().join(&e.variant);
        assert!(root.join("seed0").join("metrics.csv").exists());
        assert!(root.join("summary.csv").exists());
        assert!(root.join("success_curve.csv").exists());
        assert_eq!(e.runs.len(), 1);
    }
}
