mod common;

use common::{dot, mlp_eval};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use simplified_q::agents::{
    last_layer_kernel, Agent, AgentConfig, Algorithm, Critic, CriticNodes, QFunction,
};
use simplified_q::autodiff::{Graph, Mode, NodeId, NormKind};
use simplified_q::diagnostics::*;
use simplified_q::envs::{GraspEnv, GraspParams, ReacherEnv, ReacherParams, Trajectory, TrajMeta};
use simplified_q::rng::SimRng;
use simplified_q::{Error, Result};

/// `phi = k * a`, `q = sum(phi)`.
struct ScaledAction(f64);

impl QFunction for ScaledAction {
    fn forward_on(&self, g: &mut Graph, _obs: NodeId, act: NodeId, _mode: Mode) -> Result<CriticNodes> {
        let phi = g.scale(act, self.0);
        let q = g.row_sum(phi);
        Ok(CriticNodes {
            q,
            phi,
            stats: Default::default(),
        })
    }
}

/// `q = -|a|^2`.
struct NegSquare;

impl QFunction for NegSquare {
    fn forward_on(&self, g: &mut Graph, _obs: NodeId, act: NodeId, _mode: Mode) -> Result<CriticNodes> {
        let sq = g.square(act);
        let s = g.row_sum(sq);
        let q = g.scale(s, -1.0);
        Ok(CriticNodes {
            q,
            phi: sq,
            stats: Default::default(),
        })
    }
}

fn random_critic(seed: u64, obs: usize, act: usize) -> Critic {
    let mut rng = SimRng::new(seed);
    let mut c = Critic::new(obs, act, &[16, 12], NormKind::None, &mut rng).unwrap();
    for layer in &mut c.net.layers {
        if let Some(b) = layer.bias.as_mut() {
            b.mapv_inplace(|_| rng.uniform(-0.3, 0.3));
        }
    }
    c
}

fn grasp_probe(count: usize, seed: u64) -> ProbeSet {
    ProbeSet::from_random_rollouts(&mut GraspEnv::new(GraspParams::default()), count, seed).unwrap()
}

fn identity_probe(k: usize) -> ProbeSet {
    ProbeSet::new(Array2::zeros((k, 1)), Array2::eye(k)).unwrap()
}

#[test]
fn orthonormal_features_give_identity() {
    let r = feature_similarity(&ScaledAction(1.0), &identity_probe(7), SIMILARITY_CLIP).unwrap();
    assert_eq!(r.matrix, Array2::<f64>::eye(7));
    assert_eq!(r.max, 1.0);
    assert_eq!(r.min, 0.0);
    assert!((r.mean_abs - 1.0 / 7.0).abs() < 1e-15);
}

#[test]
fn similarity_matches_double_loop() {
    let critic = random_critic(3, 5, 3);
    let probe = grasp_probe(40, 1);
    let r = feature_similarity(&critic, &probe, SIMILARITY_CLIP).unwrap();
    let feats: Vec<Vec<f64>> = (0..probe.len())
        .map(|i| {
            let mut x = probe.obs.row(i).to_vec();
            x.extend(probe.act.row(i).iter());
            mlp_eval(&critic.net, &x).1
        })
        .collect();
    let mut total = 0.0;
    for i in 0..probe.len() {
        for j in 0..probe.len() {
            let d = dot(&feats[i], &feats[j]).clamp(-SIMILARITY_CLIP, SIMILARITY_CLIP);
            assert!((r.matrix[(i, j)] - d).abs() < 1e-10);
            assert_eq!(r.matrix[(i, j)], r.matrix[(j, i)]);
            total += d.abs();
        }
    }
    assert!((r.mean_abs - total / (probe.len() * probe.len()) as f64).abs() < 1e-10);
}

#[test]
fn similarity_is_clipped_on_both_sides() {
    let probe = ProbeSet::new(
        Array2::zeros((2, 1)),
        Array2::from_shape_vec((2, 1), vec![1.0, -1.0]).unwrap(),
    )
    .unwrap();
    let r = feature_similarity(&ScaledAction(200.0), &probe, 10_000.0).unwrap();
    assert_eq!(r.matrix, ndarray::array![[10_000.0, -10_000.0], [-10_000.0, 10_000.0]]);
    assert_eq!(r.above[3], (1000.0, 1.0));
}

#[test]
fn similarity_needs_two_pairs() {
    let err = feature_similarity(&ScaledAction(1.0), &identity_probe(1), 1.0).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn similarity_equals_last_layer_kernel() {
    let critic = random_critic(9, 5, 3);
    let probe = grasp_probe(12, 4);
    let r = feature_similarity(&critic, &probe, SIMILARITY_CLIP).unwrap();
    for i in 0..probe.len() {
        for j in 0..probe.len() {
            let k = last_layer_kernel(
                &critic,
                (probe.obs.row(i).as_slice().unwrap(), probe.act.row(i).as_slice().unwrap()),
                (probe.obs.row(j).as_slice().unwrap(), probe.act.row(j).as_slice().unwrap()),
            )
            .unwrap();
            assert!((k - r.matrix[(i, j)]).abs() < 1e-12 * (1.0 + k.abs()));
        }
    }
}

#[test]
fn probe_set_is_frozen_by_seed() {
    let a = grasp_probe(512, 7);
    let b = grasp_probe(512, 7);
    let c = grasp_probe(512, 8);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), 512);
    assert_eq!(a.obs.ncols(), 5);
    assert!(a.act.iter().all(|v| (-1.0..=1.0).contains(v)));
    let r = feature_similarity(&random_critic(1, 5, 3), &a, SIMILARITY_CLIP).unwrap();
    assert_eq!(r.matrix.dim(), (512, 512));
    assert_eq!(r.pairs, 512);
}

#[test]
fn q_trace_bound_and_zero_critic() {
    let mut critic = random_critic(2, 5, 3);
    let last = critic.net.layers.len() - 1;
    critic.net.layers[last].weight.fill(0.0);
    let t = q_trace(&critic, &grasp_probe(64, 0), 0.99, 17).unwrap();
    assert!((t.bound - 100.0).abs() < 1e-12);
    assert_eq!(t.step, 17);
    assert_eq!(t.gamma, 0.99);
    assert!(t.values.iter().all(|&q| q == 0.0));
    assert_eq!(t.fraction_below(), 1.0);
    assert!(!t.violates());
    assert!(q_trace(&critic, &grasp_probe(4, 0), 1.0, 0).is_err());
}

#[test]
fn q_trace_flags_values_above_bound() {
    let probe = ProbeSet::new(
        Array2::zeros((4, 1)),
        Array2::from_shape_vec((4, 1), vec![0.5, 1.0, 3.0, -2.0]).unwrap(),
    )
    .unwrap();
    let t = q_trace(&ScaledAction(50.0), &probe, 0.99, 0).unwrap();
    assert_eq!(t.values, vec![25.0, 50.0, 150.0, -100.0]);
    assert!(t.violates());
    assert_eq!(t.fraction_below(), 0.75);
    assert_eq!(t.max(), 150.0);
}

fn traj_with(actions: Vec<Vec<f64>>) -> Trajectory {
    let n = actions.len();
    Trajectory {
        observations: vec![vec![0.0]; n + 1],
        actions,
        rewards: vec![0.0; n],
        fault: false,
        meta: TrajMeta {
            env: "test".into(),
            seed: 0,
            demonstrator: "test".into(),
            horizon: n,
        },
    }
}

#[test]
fn constant_action_fills_one_bin() {
    let h = action_histogram(&[traj_with(vec![vec![0.3, -0.7]; 25])], 10).unwrap();
    assert_eq!(h.samples, 25);
    assert_eq!(h.mass[0][6], 1.0);
    assert_eq!(h.mass[1][1], 1.0);
    assert_eq!(h.mass[0].iter().sum::<f64>(), 1.0);
    assert_eq!(h.bang_bang_index(0), 0.0);
}

#[test]
fn bang_bang_policy_has_index_one() {
    let acts: Vec<Vec<f64>> = (0..40).map(|i| vec![if i % 3 == 0 { 1.0 } else { -1.0 }; 3]).collect();
    let h = action_histogram(&[traj_with(acts)], 20).unwrap();
    assert_eq!(h.mean_bang_bang_index(), 1.0);
    assert_eq!(h.edges(0), (-1.0, -0.9));
}

#[test]
fn uniform_actions_spread_evenly() {
    let mut rng = SimRng::new(5);
    let acts: Vec<Vec<f64>> = (0..1_000_000).map(|_| vec![rng.uniform(-1.0, 1.0)]).collect();
    let h = actions_histogram(acts.iter().map(Vec::as_slice), 20).unwrap();
    for m in &h.mass[0] {
        assert!((m - 0.05).abs() < 0.002, "{m}");
    }
}

#[test]
fn histogram_rejects_empty_input() {
    assert!(action_histogram(&[], 10).is_err());
    assert!(action_histogram(&[traj_with(vec![vec![0.0]])], 0).is_err());
}

proptest! {
    #[test]
    fn histogram_mass_sums_to_one(vals in prop::collection::vec(-3.0..3.0f64, 1..200), bins in 1usize..30) {
        let acts: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v]).collect();
        let h = actions_histogram(acts.iter().map(Vec::as_slice), bins).unwrap();
        prop_assert!((h.mass[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(h.bang_bang_index(0) <= 1.0 + 1e-12);
    }
}

#[test]
fn quadratic_field_points_to_origin() {
    let f = q_action_gradient_field(&NegSquare, &[0.0], &[0.0, 0.0, 0.4], [0, 1], 5).unwrap();
    assert_eq!(f.points.len(), 25);
    for p in &f.points {
        assert!((p.grad[0] + 2.0 * p.a[0]).abs() < 1e-12);
        assert!((p.grad[1] + 2.0 * p.a[1]).abs() < 1e-12);
        let norm = (p.a[0] * p.a[0] + p.a[1] * p.a[1]).sqrt();
        let mag = (p.grad[0] * p.grad[0] + p.grad[1] * p.grad[1]).sqrt();
        assert!((mag - 2.0 * norm).abs() < 1e-12);
        assert!((p.q + norm * norm + 0.16).abs() < 1e-12);
    }
    assert_eq!(f.points[0].a, [-1.0, -1.0]);
    assert_eq!(f.points[24].a, [1.0, 1.0]);
}

#[test]
fn field_matches_finite_differences() {
    let s = [0.1, -0.3, 0.05, 0.2, 0.0];
    let base = [0.0, 0.0, 0.5];
    let grid = 7;
    let mut checked = 0;
    for seed in 0..10 {
        let critic = random_critic(100 + seed, 5, 3);
        let f = q_action_gradient_field(&critic, &s, &base, [0, 1], grid).unwrap();
        let mut smooth = true;
        let mut worst = 0.0f64;
        let h = 1e-6;
        for p in &f.points {
            let mut g = Graph::new();
            let mut a = vec![base.to_vec(); 4];
            a[0][0] = p.a[0] + h;
            a[1][0] = p.a[0] - h;
            a[2][1] = p.a[1] + h;
            a[3][1] = p.a[1] - h;
            a[0][1] = p.a[1];
            a[1][1] = p.a[1];
            a[2][0] = p.a[0];
            a[3][0] = p.a[0];
            let on = g.constant(Array2::from_shape_fn((4, 5), |(_, c)| s[c]));
            let an = g.constant(Array2::from_shape_fn((4, 3), |(r, c)| a[r][c]));
            let nodes = critic.forward_on(&mut g, on, an, Mode::Eval).unwrap();
            smooth &= g.kink_margin() > 1e-4;
            let q = g.value(nodes.q).index_axis(Axis(1), 0).to_vec();
            let fd = [(q[0] - q[1]) / (2.0 * h), (q[2] - q[3]) / (2.0 * h)];
            for k in 0..2 {
                worst = worst.max(simplified_q::autodiff::relative_error(p.grad[k], fd[k]));
            }
        }
        if smooth {
            assert!(worst < 1e-4, "seed {seed}: {worst:e}");
            checked += 1;
        }
    }
    assert!(checked >= 5, "only {checked} kink-free critics");
}

#[test]
fn zero_critic_has_zero_field() {
    let mut critic = random_critic(4, 5, 3);
    let last = critic.net.layers.len() - 1;
    critic.net.layers[last].weight.fill(0.0);
    let f = q_action_gradient_field(&critic, &[0.0; 5], &[0.0; 3], [0, 2], 4).unwrap();
    assert!(f.points.iter().all(|p| p.q == 0.0 && p.grad == [0.0, 0.0]));
    assert!(q_action_gradient_field(&critic, &[0.0; 5], &[0.0; 3], [1, 1], 4).is_err());
    assert!(q_action_gradient_field(&critic, &[0.0; 5], &[0.0; 3], [0, 3], 4).is_err());
}

fn records(pattern: impl Fn(usize) -> bool, n: usize) -> Vec<EpisodeRecord> {
    (0..n)
        .map(|i| EpisodeRecord {
            success: pattern(i),
            fault: !pattern(i) && i % 2 == 0,
        })
        .collect()
}

#[test]
fn all_success_gives_degenerate_interval() {
    let runs = vec![records(|_| true, 200); 3];
    let s = run_statistics(&runs, 10).unwrap();
    assert_eq!(s.points.len(), 20);
    assert_eq!(s.per_seed[0].success.len(), 20);
    for p in &s.points {
        assert_eq!(p.success_iqm, 1.0);
        assert_eq!(p.success_ci, Some((1.0, 1.0)));
        assert_eq!(p.fault_iqm, 0.0);
    }
    assert_eq!(s.points[19].episode_end, 200);
}

#[test]
fn iqm_matches_hand_computation() {
    assert_eq!(interquartile_mean(&[0.0, 0.0, 1.0, 1.0]), 0.5);
    assert_eq!(interquartile_mean(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]), 0.5);
    assert_eq!(interquartile_mean(&[5.0, 1.0, 9.0, 3.0, 100.0, 2.0, 4.0, -50.0]), 3.5);
    assert_eq!(interquartile_mean(&[0.2, 0.4, 0.9]), 0.5);
    // four seeds: window rates 0, 0, 1, 1 -> middle pair 0 and 1
    let runs = vec![
        records(|_| false, 10),
        records(|_| false, 10),
        records(|_| true, 10),
        records(|_| true, 10),
    ];
    let s = run_statistics(&runs, 10).unwrap();
    assert_eq!(s.points[0].success_iqm, 0.5);
    let (lo, hi) = s.points[0].success_ci.unwrap();
    assert!(lo <= 0.5 && hi >= 0.5 && lo >= 0.0 && hi <= 1.0);
}

#[test]
fn percentile_interpolates() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(percentile(&v, 0.0), 1.0);
    assert_eq!(percentile(&v, 0.5), 3.0);
    assert_eq!(percentile(&v, 0.875), 4.5);
    assert_eq!(percentile(&v, 1.0), 5.0);
}

#[test]
fn bootstrap_is_seed_stratified_and_deterministic() {
    let runs: Vec<Vec<EpisodeRecord>> = (0..5).map(|k| records(move |i| i % 5 < k, 50)).collect();
    let a = run_statistics(&runs, 10).unwrap();
    let b = run_statistics(&runs, 10).unwrap();
    assert_eq!(a, b);
    for p in &a.points {
        let (lo, hi) = p.success_ci.unwrap();
        assert!(lo <= p.success_iqm && p.success_iqm <= hi);
        assert!(lo >= 0.0 && hi <= 0.8 + 1e-12);
    }
    assert_eq!(a.config.resamples, 2000);
}

#[test]
fn single_seed_omits_interval() {
    let s = run_statistics(&[records(|i| i % 2 == 0, 35)], 10).unwrap();
    assert_eq!(s.points.len(), 3);
    assert!(s.points.iter().all(|p| p.success_ci.is_none() && p.success_iqm == 0.5));
    assert!(run_statistics(&[], 10).is_err());
    assert!(run_statistics(&[records(|_| true, 5)], 0).is_err());
}

#[test]
fn final_rate_uses_tail() {
    let r = records(|i| i >= 150, 200);
    assert_eq!(final_rate(&r, 50), 1.0);
    assert_eq!(final_rate(&r, 100), 0.5);
    assert_eq!(final_rate(&r[..10], 50), 0.0);
}

#[test]
fn diagnostics_leave_agent_untouched() {
    let cfg = AgentConfig {
        batch_size: 16,
        critic_hidden: vec![12, 12],
        policy_hidden: vec![8],
        ..AgentConfig::for_algorithm(Algorithm::Crossq)
    };
    let agent = Agent::new(cfg, 5, 3, 0).unwrap();
    let before = agent.checksum();
    let probe = grasp_probe(64, 0);
    let critic = &agent.critics[0];
    feature_similarity(critic, &probe, SIMILARITY_CLIP).unwrap();
    q_trace(critic, &probe, 0.99, 0).unwrap();
    q_action_gradient_field(critic, &[0.0; 5], &[0.0; 3], [0, 1], 5).unwrap();
    assert_eq!(agent.checksum(), before);
}

#[test]
fn csv_reports_round_trip_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let critic = random_critic(5, 4, 2);
    let probe =
        ProbeSet::from_random_rollouts(&mut ReacherEnv::new(ReacherParams::default()), 30, 2).unwrap();
    let sim = feature_similarity(&critic, &probe, SIMILARITY_CLIP).unwrap();
    let trace = q_trace(&critic, &probe, 0.99, 3).unwrap();
    let field = q_action_gradient_field(&critic, &[0.1, 0.2, 0.3, 0.4], &[0.0, 0.0], [0, 1], 3).unwrap();
    let hist = actions_histogram(probe.act.rows().into_iter().map(|r| r.to_slice().unwrap()), 8).unwrap();
    let stats = run_statistics(&[records(|i| i % 3 == 0, 20), records(|i| i % 4 == 0, 20)], 10).unwrap();
    let write_all = |tag: &str| {
        let p = |n: &str| dir.path().join(format!("{tag}_{n}.csv"));
        write_similarity_csv(&p("sim"), &sim).unwrap();
        write_q_trace_csv(&p("trace"), std::slice::from_ref(&trace)).unwrap();
        write_field_csv(&p("field"), &field).unwrap();
        write_histogram_csv(&p("hist"), &hist).unwrap();
        write_run_statistics_csv(&p("stats"), &stats).unwrap();
    };
    write_all("a");
    write_all("b");
    for n in ["sim", "trace", "field", "hist", "stats"] {
        let a = std::fs::read(dir.path().join(format!("a_{n}.csv"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b_{n}.csv"))).unwrap();
        assert_eq!(a, b, "{n}");
    }
    let table = read_csv_table(&dir.path().join("a_sim.csv")).unwrap();
    assert_eq!(table.headers.len(), 30);
    let m = table.matrix().unwrap();
    for i in 0..30 {
        for j in 0..30 {
            assert_eq!(m[i][j], sim.matrix[(i, j)]);
        }
    }
    let tr = read_csv_table(&dir.path().join("a_trace.csv")).unwrap();
    let q: Vec<f64> = tr.numeric_column("q").unwrap().into_iter().map(Option::unwrap).collect();
    assert_eq!(q, trace.values);
    let st = read_csv_table(&dir.path().join("a_stats.csv")).unwrap();
    assert_eq!(st.rows.len(), 2);
    assert!(st.numeric_column("success_lo").unwrap().iter().all(Option::is_some));
}

#[test]
fn malformed_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "a,b\n1,2\n3,oops\n4\n").unwrap();
    let t = read_csv_table(&path);
    match t {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
    std::fs::write(&path, "a,b\n1,2\n3,oops\n").unwrap();
    let t = read_csv_table(&path).unwrap();
    match t.numeric_column("b") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    assert!(t.numeric_column("c").is_err());
}
