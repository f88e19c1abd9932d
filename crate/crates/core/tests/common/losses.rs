//! Random loss instances and a finite-difference sweep over every learning rule.
#![allow(dead_code)]

use ndarray::Array2;
use simplified_q::agents::{
    actor_objective, bc_objective, critic_objective, Critic, CriticBatch, ObjectiveSpec, Policy,
    QFunction, RegKind,
};
use simplified_q::autodiff::{gradient_check, Mat, MlpParams, Mode, NormKind};
use simplified_q::rng::SimRng;

pub const OBS: usize = 3;
pub const ACT: usize = 2;
const FD_STEP: f64 = 1e-4;
/// Instances with a ReLU or clamp input this close to its breakpoint are
/// resampled, since a central difference straddling a kink is meaningless.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn random_mat(rng: &mut SimRng, rows: usize, cols: usize, scale: f64) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| rng.uniform(-scale, scale))
}

/// Random biases keep ReLU units off their kinks.
fn jitter_biases(net: &mut MlpParams, rng: &mut SimRng) {
    for layer in &mut net.layers {
        if let Some(b) = layer.bias.as_mut() {
            b.mapv_inplace(|_| rng.uniform(-0.2, 0.2));
        }
    }
}

pub fn small_critic(rng: &mut SimRng, norm: NormKind) -> Critic {
    let mut c = Critic::new(OBS, ACT, &[6, 5], norm, rng).unwrap();
    jitter_biases(&mut c.net, rng);
    c
}

pub fn small_policy(rng: &mut SimRng) -> Policy {
    let mut p = Policy::new(OBS, ACT, &[5], rng).unwrap();
    jitter_biases(&mut p.net, rng);
    p
}

/// A batch with every auxiliary block filled with random values.
pub fn random_batch(rng: &mut SimRng, b: usize, ood_blocks: usize) -> CriticBatch {
    let act = |rng: &mut SimRng| random_mat(rng, b, ACT, 0.99);
    CriticBatch {
        s: random_mat(rng, b, OBS, 1.0),
        a: act(rng),
        ret: random_mat(rng, b, 1, 2.0),
        discount: Array2::from_shape_fn((b, 1), |_| if rng.uniform(0.0, 1.0) < 0.8 { 0.97 } else { 0.0 }),
        s_target: random_mat(rng, b, OBS, 1.0),
        a_target: act(rng),
        logp_target: random_mat(rng, b, 1, 1.0),
        ood: (0..ood_blocks).map(|_| act(rng)).collect(),
        reg_u: Some(act(rng)),
        reg_s2: Some(random_mat(rng, b, OBS, 1.0)),
        reg_a2: Some(act(rng)),
        next_s: Some(random_mat(rng, b, OBS, 1.0)),
        next_a: Some(act(rng)),
    }
}

pub fn spec(alpha: f64, beta: f64, weighted: bool, reg: RegKind) -> ObjectiveSpec {
    ObjectiveSpec {
        alpha,
        beta,
        weighted_cql: weighted,
        cql_data_term: true,
        reg,
        mode: Mode::Train,
        tau: 0.1,
    }
}

pub fn objective_value(net: &MlpParams, batch: &CriticBatch, spec: &ObjectiveSpec, y: &Mat) -> f64 {
    let critic = Critic { net: net.clone() };
    let obj = critic_objective(&critic, batch, spec, Some(y)).unwrap();
    obj.graph.scalar(obj.total)
}

fn smooth(margin: f64) -> bool {
    margin >= KINK_MARGIN
}

/// Worst relative error of the critic objective gradient against central
/// differences, with targets held fixed. `None` near a kink.
pub fn critic_fd_error(critic: &Critic, batch: &CriticBatch, spec: &ObjectiveSpec, y: &Mat) -> Option<f64> {
    let obj = critic_objective(critic, batch, spec, Some(y)).unwrap();
    if !smooth(obj.graph.kink_margin()) {
        return None;
    }
    let adj = obj.graph.backward(obj.total).unwrap();
    let grads = critic.net.grads_from(&obj.graph, &adj).unwrap().flat();
    Some(gradient_check(|p| objective_value(p, batch, spec, y), &critic.net, &grads, FD_STEP))
}

pub fn actor_fd_error(
    policy: &Policy,
    critics: &[&dyn QFunction],
    s: &Mat,
    noise: &Mat,
    tau: f64,
) -> Option<f64> {
    let obj = actor_objective(policy, critics, s, noise, tau).unwrap();
    if !smooth(obj.graph.kink_margin()) {
        return None;
    }
    let adj = obj.graph.backward(obj.loss).unwrap();
    let grads = policy.net.grads_from(&obj.graph, &adj).unwrap().flat();
    let act_dim = policy.act_dim;
    Some(gradient_check(
        |p| {
            let probe = Policy { net: p.clone(), act_dim };
            let o = actor_objective(&probe, critics, s, noise, tau).unwrap();
            o.graph.scalar(o.loss)
        },
        &policy.net,
        &grads,
        FD_STEP,
    ))
}

pub fn bc_fd_error(policy: &Policy, s: &Mat, a: &Mat) -> Option<f64> {
    let (g, loss) = bc_objective(policy, s, a).unwrap();
    if !smooth(g.kink_margin()) {
        return None;
    }
    let adj = g.backward(loss).unwrap();
    let grads = policy.net.grads_from(&g, &adj).unwrap().flat();
    let act_dim = policy.act_dim;
    Some(gradient_check(
        |p| {
            let probe = Policy { net: p.clone(), act_dim };
            let (g, l) = bc_objective(&probe, s, a).unwrap();
            g.scalar(l)
        },
        &policy.net,
        &grads,
        FD_STEP,
    ))
}

/// Named loss families covered by the sweep.
pub const FAMILIES: [&str; 7] = [
    "td",
    "cql_weighted",
    "cql_unweighted",
    "ntk_reg",
    "dr3_reg",
    "actor",
    "bc",
];

/// One family's sweep outcome.
#[derive(Debug, Clone, Copy)]
pub struct FdResult {
    pub family: &'static str,
    pub checked: usize,
    pub resampled: usize,
    pub worst: f64,
}

/// Checks `per_family` smooth random instances of every family and reports
/// the worst relative error of each.
pub fn fd_sweep(seed: u64, per_family: usize) -> Vec<FdResult> {
    let mut rng = SimRng::new(seed);
    let mut out = Vec::new();
    for family in FAMILIES {
        let mut worst = 0.0f64;
        let (mut checked, mut resampled) = (0, 0);
        while checked < per_family {
            assert!(resampled < 20 * per_family.max(1), "{family}: too many instances near a kink");
            let b = 2 + rng.below(5);
            let err = match family {
                "actor" => {
                    let policy = small_policy(&mut rng);
                    let c1 = small_critic(&mut rng, NormKind::None);
                    let c2 = small_critic(&mut rng, NormKind::LayerNorm);
                    let s = random_mat(&mut rng, b, OBS, 1.0);
                    let noise = Array2::from_shape_fn((b, ACT), |_| rng.normal());
                    let critics: Vec<&dyn QFunction> = if rng.below(2) == 0 {
                        vec![&c1]
                    } else {
                        vec![&c1, &c2]
                    };
                    actor_fd_error(&policy, &critics, &s, &noise, rng.uniform(0.0, 0.5))
                }
                "bc" => {
                    let policy = small_policy(&mut rng);
                    let s = random_mat(&mut rng, b, OBS, 1.0);
                    let a = random_mat(&mut rng, b, ACT, 0.99);
                    bc_fd_error(&policy, &s, &a)
                }
                _ => {
                    let norm = [NormKind::None, NormKind::LayerNorm, NormKind::BatchNorm][rng.below(3)];
                    let critic = small_critic(&mut rng, norm);
                    let blocks = 1 + rng.below(3);
                    let batch = random_batch(&mut rng, b, blocks);
                    let y = random_mat(&mut rng, b, 1, 3.0);
                    let sp = match family {
                        "td" => spec(0.0, 0.0, true, RegKind::None),
                        "cql_weighted" => spec(1.0, 0.0, true, RegKind::None),
                        "cql_unweighted" => spec(1.0, 0.0, false, RegKind::None),
                        "ntk_reg" => spec(0.5, 0.7, true, RegKind::Ntk),
                        _ => spec(0.5, 0.7, true, RegKind::Dr3),
                    };
                    critic_fd_error(&critic, &batch, &sp, &y)
                }
            };
            match err {
                Some(e) => {
                    worst = worst.max(e);
                    checked += 1;
                }
                None => resampled += 1,
            }
        }
        out.push(FdResult {
            family,
            checked,
            resampled,
            worst,
        });
    }
    out
}
