//! Critics, the actor, and every learning rule.

mod checkpoint;
mod config;
mod critic;
mod losses;
mod ntk;
mod policy;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use checkpoint::AgentCheckpoint;
pub use config::{AgentConfig, Algorithm, EntropyMode, MuMode};
pub use critic::{critic_forward, target_sync, Critic, CriticNodes, CriticOutput, QFunction};
pub use losses::{
    bellman_target, cql_node, cql_penalty, cql_weights, critic_objective, dr3_node, dr3_reg_loss,
    ntk_reg_loss, ntk_reg_node, td_loss_node, td_targets, uniform_actions, CriticBatch, DrawSpec,
    Objective, ObjectiveSpec, RegKind,
};
pub use ntk::{last_layer_kernel, ntk_kernel_estimate, param_gradient};
pub use policy::{Policy, PolicySample, LOG_STD_MAX, LOG_STD_MIN};

use crate::autodiff::{AdamState, Graph, Mat, Mode, NodeId, NormKind};
use crate::envs::{Behaviour, Environment};
use crate::replay::{DualBuffer, Transition};
use crate::rng::{derive_seed, SimRng};
use crate::{Error, Result};

/// Loss components of one update. Components an algorithm does not use are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub td: f64,
    pub cql: f64,
    pub reg: f64,
    pub critic: f64,
    pub actor: f64,
    pub bc: f64,
    pub entropy: f64,
    pub temperature: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.td, self.cql, self.reg, self.critic, self.actor, self.bc, self.entropy]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn rows_of(transitions: &[&Transition], pick: impl Fn(&Transition) -> &[f64]) -> Mat {
    let cols = transitions.first().map_or(0, |t| pick(t).len());
    Array2::from_shape_fn((transitions.len(), cols), |(i, j)| pick(transitions[i])[j])
}

/// Elementwise minimum of `[B x 1]` nodes via `b - relu(b - a)`.
fn min_nodes(g: &mut Graph, qs: &[NodeId]) -> Result<NodeId> {
    let mut m = qs[0];
    for &q in &qs[1..] {
        let d = g.sub(q, m)?;
        let r = g.relu(d);
        m = g.sub(q, r)?;
    }
    Ok(m)
}

/// Tape for `E[tau * log pi(a|s) - min_k Q_k(s, a)]` with
/// `a = tanh(mean + std * noise)`. Critics are evaluated in eval mode and
/// only the policy parameters are meant to be differentiated.
pub struct ActorObjective {
    pub graph: Graph,
    pub loss: NodeId,
    pub log_prob: NodeId,
}

pub fn actor_objective(
    policy: &Policy,
    critics: &[&dyn QFunction],
    s: &Mat,
    noise: &Mat,
    tau: f64,
) -> Result<ActorObjective> {
    if critics.is_empty() {
        return Err(Error::config("actor update needs at least one critic"));
    }
    let mut g = Graph::new();
    let sn = g.constant(s.clone());
    let sample = policy.sample_on(&mut g, sn, noise)?;
    let mut qs = Vec::with_capacity(critics.len());
    for c in critics {
        qs.push(c.forward_on(&mut g, sn, sample.action, Mode::Eval)?.q);
    }
    let q = min_nodes(&mut g, &qs)?;
    let tl = g.scale(sample.log_prob, tau);
    let per = g.sub(tl, q)?;
    let loss = g.mean(per);
    Ok(ActorObjective {
        graph: g,
        loss,
        log_prob: sample.log_prob,
    })
}

/// One Adam step on the actor objective. Returns `(loss, mean log pi)`.
pub fn actor_step(
    policy: &mut Policy,
    opt: &mut AdamState,
    critics: &[&dyn QFunction],
    s: &Mat,
    noise: &Mat,
    tau: f64,
) -> Result<(f64, f64)> {
    let obj = actor_objective(policy, critics, s, noise, tau)?;
    let g = &obj.graph;
    let value = g.scalar(obj.loss);
    let logp = g.value(obj.log_prob).mean().unwrap_or(0.0);
    if !value.is_finite() {
        return Err(Error::Divergence {
            step: opt.step,
            what: "actor loss is not finite".into(),
        });
    }
    let adj = g.backward(obj.loss)?;
    let grads = policy.net.grads_from(g, &adj)?;
    crate::autodiff::adam_step(&mut policy.net, &grads, opt)?;
    Ok((value, logp))
}

/// Adam step on `-log(tau) * (E[log pi] + target_entropy)` with respect to
/// `log(tau)`; returns the new `log(tau)`.
pub fn temperature_step(
    log_temperature: f64,
    opt: &mut AdamState,
    mean_log_prob: f64,
    target_entropy: f64,
) -> Result<f64> {
    let grad = Array2::from_elem((1, 1), -(mean_log_prob + target_entropy));
    let mut value = Array2::from_elem((1, 1), log_temperature);
    opt.update(std::iter::once(value.view_mut()), &[grad])?;
    Ok(value[[0, 0]])
}

/// Tape for `mean_i |a_i - tanh(mean(s_i))|^2`.
pub fn bc_objective(policy: &Policy, s: &Mat, a: &Mat) -> Result<(Graph, NodeId)> {
    let mut g = Graph::new();
    let sn = g.constant(s.clone());
    let (mean, _) = policy.head(&mut g, sn)?;
    let pred = g.tanh(mean);
    let target = g.constant(a.clone());
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff);
    let per = g.row_sum(sq);
    let loss = g.mean(per);
    Ok((g, loss))
}

/// One Adam step on the cloning loss; returns the loss before the step.
pub fn bc_step(policy: &mut Policy, opt: &mut AdamState, s: &Mat, a: &Mat) -> Result<f64> {
    let (g, loss) = bc_objective(policy, s, a)?;
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Divergence {
            step: opt.step,
            what: "behaviour cloning loss is not finite".into(),
        });
    }
    let adj = g.backward(loss)?;
    let grads = policy.net.grads_from(&g, &adj)?;
    crate::autodiff::adam_step(&mut policy.net, &grads, opt)?;
    Ok(value)
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub policy: Policy,
    pub policy_opt: AdamState,
    pub critics: Vec<Critic>,
    pub critic_opts: Vec<AdamState>,
    /// Polyak copies; empty for algorithms without a target network.
    pub targets: Vec<Critic>,
    pub log_temperature: f64,
    pub temperature_opt: AdamState,
    pub rng: SimRng,
    /// Completed update calls.
    pub updates: u64,
}

impl Agent {
    pub fn new(config: AgentConfig, obs_dim: usize, act_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = SimRng::with_stream(seed, 1);
        let policy = Policy::new(obs_dim, act_dim, &config.policy_hidden, &mut init)?;
        let norm = match config.algorithm {
            Algorithm::Crossq => NormKind::BatchNorm,
            Algorithm::Layernorm => NormKind::LayerNorm,
            _ => NormKind::None,
        };
        let critics = (0..config.critic_count())
            .map(|_| Critic::new(obs_dim, act_dim, &config.critic_hidden, norm, &mut init))
            .collect::<Result<Vec<_>>>()?;
        let targets = if config.algorithm.uses_target_network() {
            critics.clone()
        } else {
            Vec::new()
        };
        let critic_opts = critics.iter().map(|c| AdamState::new(&c.net, config.lr)).collect();
        let policy_opt = AdamState::new(&policy.net, config.lr);
        let temperature_opt = AdamState::with_shapes(vec![Array2::zeros((1, 1))], config.lr);
        let log_temperature = if config.temperature > 0.0 {
            config.temperature.ln()
        } else {
            f64::NEG_INFINITY
        };
        Ok(Self {
            obs_dim,
            act_dim,
            policy,
            policy_opt,
            critics,
            critic_opts,
            targets,
            log_temperature,
            temperature_opt,
            rng: SimRng::with_stream(seed, 2),
            updates: 0,
            config,
        })
    }

    pub fn temperature(&self) -> f64 {
        match self.config.entropy_mode {
            EntropyMode::Fixed => self.config.temperature,
            EntropyMode::Auto => self.log_temperature.exp(),
        }
    }

    fn objective_spec(&self) -> ObjectiveSpec {
        let c = &self.config;
        ObjectiveSpec {
            alpha: c.alpha,
            beta: c.beta,
            weighted_cql: c.weighted_cql,
            cql_data_term: c.cql_data_term,
            reg: match c.algorithm {
                Algorithm::SimplifiedQ => RegKind::Ntk,
                Algorithm::Dr3 => RegKind::Dr3,
                _ => RegKind::None,
            },
            mode: Mode::Train,
            tau: self.temperature(),
        }
    }

    pub fn draw_spec(&self) -> DrawSpec {
        let c = &self.config;
        let spec = self.objective_spec();
        let reg = spec.beta > 0.0;
        DrawSpec {
            gamma: c.gamma,
            ood_blocks: if c.alpha > 0.0 { c.ood_action_samples } else { 0 },
            ood_from_policy: c.mu_mode == MuMode::Policy,
            ntk: reg && spec.reg == RegKind::Ntk,
            dr3: reg && spec.reg == RegKind::Dr3,
        }
    }

    /// Whether critic updates need a second, independent batch.
    pub fn needs_second_batch(&self) -> bool {
        self.draw_spec().ntk
    }

    /// Objectives for every critic on a fixed batch, without stepping.
    pub fn critic_objectives(&self, batch: &CriticBatch) -> Result<Vec<Objective>> {
        let spec = self.objective_spec();
        let y = if self.targets.is_empty() {
            None
        } else {
            let refs: Vec<&dyn QFunction> = self.targets.iter().map(|c| c as &dyn QFunction).collect();
            Some(td_targets(&refs, batch, spec.tau)?)
        };
        self.critics
            .iter()
            .map(|c| critic_objective(c, batch, &spec, y.as_ref()))
            .collect()
    }

    /// One Adam step per critic on a pre-drawn batch, then target averaging.
    /// A non-finite loss or gradient leaves every network untouched.
    pub fn critic_step(&mut self, batch: &CriticBatch) -> Result<LossReport> {
        let objectives = self.critic_objectives(batch)?;
        let mut grads = Vec::with_capacity(objectives.len());
        let mut report = LossReport {
            temperature: self.temperature(),
            ..Default::default()
        };
        let k = objectives.len() as f64;
        for (obj, critic) in objectives.iter().zip(&self.critics) {
            let total = obj.graph.scalar(obj.total);
            if !total.is_finite() {
                return Err(Error::Divergence {
                    step: self.updates,
                    what: format!("critic loss is {total}"),
                });
            }
            let adj = obj.graph.backward(obj.total)?;
            let g = critic.net.grads_from(&obj.graph, &adj)?;
            if !g.is_finite() {
                return Err(Error::Divergence {
                    step: self.updates,
                    what: "critic gradient is not finite".into(),
                });
            }
            report.td += obj.value(Some(obj.td)) / k;
            report.cql += obj.value(obj.cql) / k;
            report.reg += obj.value(obj.reg) / k;
            report.critic += total / k;
            grads.push(g);
        }
        for (((critic, opt), g), obj) in self
            .critics
            .iter_mut()
            .zip(&mut self.critic_opts)
            .zip(&grads)
            .zip(&objectives)
        {
            crate::autodiff::adam_step(&mut critic.net, g, opt)?;
            critic.net.update_running_stats(&obj.stats);
        }
        if let Some(polyak) = self.config.polyak() {
            for (c, t) in self.critics.iter().zip(&mut self.targets) {
                target_sync(c, t, polyak);
            }
        }
        Ok(report)
    }

    /// Draws auxiliary actions for `transitions` and takes a critic step.
    pub fn critic_update(
        &mut self,
        transitions: &[&Transition],
        second: Option<&[&Transition]>,
    ) -> Result<LossReport> {
        let batch = CriticBatch::draw(transitions, second, &self.policy, self.draw_spec(), &mut self.rng)?;
        self.critic_step(&batch)
    }

    /// Actor step on `states`, followed by a temperature step when tuned.
    pub fn actor_update(&mut self, states: &Mat) -> Result<LossReport> {
        let noise = self.policy.draw_noise(states.nrows(), &mut self.rng);
        let tau = self.temperature();
        let critics: Vec<&dyn QFunction> = self.critics.iter().map(|c| c as &dyn QFunction).collect();
        let (loss, logp) =
            actor_step(&mut self.policy, &mut self.policy_opt, &critics, states, &noise, tau)?;
        if self.config.entropy_mode == EntropyMode::Auto {
            let target = self.config.target_entropy_for(self.act_dim);
            self.log_temperature =
                temperature_step(self.log_temperature, &mut self.temperature_opt, logp, target)?;
        }
        Ok(LossReport {
            actor: loss,
            entropy: -logp,
            temperature: self.temperature(),
            ..Default::default()
        })
    }

    pub fn bc_update(&mut self, transitions: &[&Transition]) -> Result<LossReport> {
        let s = rows_of(transitions, |t| &t.s);
        let a = rows_of(transitions, |t| &t.a);
        let loss = bc_step(&mut self.policy, &mut self.policy_opt, &s, &a)?;
        Ok(LossReport {
            bc: loss,
            ..Default::default()
        })
    }

    /// One full learning step from the buffer: critic then actor for the RL
    /// algorithms, a cloning step for behaviour cloning.
    pub fn update(&mut self, buffer: &mut DualBuffer) -> Result<LossReport> {
        let bs = self.config.batch_size;
        let ids = buffer.sample_ids(bs)?;
        let report = if self.config.algorithm == Algorithm::Bc {
            let batch = buffer.resolve(&ids);
            self.bc_update(&batch.items)?
        } else {
            let second_ids = if self.needs_second_batch() {
                Some(buffer.sample_ids(bs)?)
            } else {
                None
            };
            let batch = buffer.resolve(&ids);
            let second = second_ids.as_ref().map(|ids| buffer.resolve(ids));
            let critic = self.critic_update(&batch.items, second.as_ref().map(|b| b.items.as_slice()))?;
            let states = rows_of(&batch.items, |t| &t.s);
            let actor = self.actor_update(&states)?;
            LossReport {
                actor: actor.actor,
                entropy: actor.entropy,
                temperature: actor.temperature,
                ..critic
            }
        };
        self.updates += 1;
        Ok(report)
    }

    /// Deterministic action `tanh(mean)` for one observation.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec())
            .map_err(|e| Error::config(e.to_string()))?;
        Ok(self.policy.deterministic(&x)?.row(0).to_vec())
    }

    /// Checksum over every parameter, for purity assertions.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: f64| {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for v in self.policy.net.flat() {
            feed(v);
        }
        for c in self.critics.iter().chain(&self.targets) {
            for v in c.net.flat() {
                feed(v);
            }
            for l in &c.net.layers {
                if let crate::autodiff::Norm::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } = &l.norm
                {
                    running_mean.iter().chain(running_var.iter()).for_each(|&v| feed(v));
                }
            }
        }
        feed(self.log_temperature);
        h
    }
}

/// Rolls out an agent's policy inside an environment.
#[derive(Debug, Clone)]
pub struct AgentBehaviour {
    policy: Policy,
    stochastic: bool,
    rng: SimRng,
}

impl AgentBehaviour {
    pub fn new(policy: Policy, stochastic: bool) -> Self {
        Self {
            policy,
            stochastic,
            rng: SimRng::new(0),
        }
    }
}

impl Behaviour for AgentBehaviour {
    fn name(&self) -> String {
        if self.stochastic { "policy_sample" } else { "policy_mean" }.into()
    }

    fn begin_episode(&mut self, seed: u64) {
        self.rng = SimRng::new(derive_seed(seed, 0xAC7));
    }

    fn act(&mut self, _env: &dyn Environment, observation: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, observation.len()), observation.to_vec())
            .expect("one row");
        let out = if self.stochastic {
            self.policy.sample(&x, &mut self.rng).map(|(a, _)| a)
        } else {
            self.policy.deterministic(&x)
        };
        match out {
            Ok(a) => a.index_axis(Axis(0), 0).to_vec(),
            Err(_) => vec![0.0; self.policy.act_dim],
        }
    }
}
