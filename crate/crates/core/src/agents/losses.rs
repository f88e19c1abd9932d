//! Critic objectives as tape builders. All randomness is drawn beforehand
//! and passed in, so each objective is a deterministic function of the
//! critic parameters.

use ndarray::{Array2, Axis};

use super::critic::{CriticNodes, QFunction};
use super::policy::Policy;
use crate::autodiff::{BatchStats, Graph, Mat, Mode, NodeId};
use crate::replay::Transition;
use crate::rng::SimRng;
use crate::{Error, Result};

/// A sampled batch with every auxiliary action already drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticBatch {
    pub s: Mat,
    pub a: Mat,
    /// N-step discounted reward sums, `[B x 1]`.
    pub ret: Mat,
    /// `bootstrap * gamma^n_used`, `[B x 1]`.
    pub discount: Mat,
    pub s_target: Mat,
    /// `a' ~ pi(s_target)` and its log-density.
    pub a_target: Mat,
    pub logp_target: Mat,
    /// Out-of-distribution action blocks, each `[B x d]`.
    pub ood: Vec<Mat>,
    /// Uniform actions paired with `s` in the NTK regularizer.
    pub reg_u: Option<Mat>,
    /// Independently sampled states and `a ~ pi(s2)` for the NTK regularizer.
    pub reg_s2: Option<Mat>,
    pub reg_a2: Option<Mat>,
    /// Consecutive pairs for the DR3 regularizer.
    pub next_s: Option<Mat>,
    pub next_a: Option<Mat>,
}

fn stack_rows(rows: &[&[f64]]) -> Mat {
    let cols = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j])
}

fn column(values: impl Iterator<Item = f64>) -> Mat {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).expect("column")
}

pub fn uniform_actions(rows: usize, dim: usize, rng: &mut SimRng) -> Mat {
    Array2::from_shape_fn((rows, dim), |_| rng.uniform(-1.0, 1.0))
}

/// What to draw for a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawSpec {
    pub gamma: f64,
    /// OOD blocks; zero skips the conservative penalty.
    pub ood_blocks: usize,
    pub ood_from_policy: bool,
    pub ntk: bool,
    pub dr3: bool,
}

impl CriticBatch {
    /// Gathers `transitions` and draws every auxiliary action. `second` is
    /// the independent state batch for the NTK regularizer.
    pub fn draw(
        transitions: &[&Transition],
        second: Option<&[&Transition]>,
        policy: &Policy,
        spec: DrawSpec,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::BufferEmpty);
        }
        let d = policy.act_dim;
        let b = transitions.len();
        let s = stack_rows(&transitions.iter().map(|t| t.s.as_slice()).collect::<Vec<_>>());
        let a = stack_rows(&transitions.iter().map(|t| t.a.as_slice()).collect::<Vec<_>>());
        let s_target =
            stack_rows(&transitions.iter().map(|t| t.s_target.as_slice()).collect::<Vec<_>>());
        let ret = column(transitions.iter().map(|t| t.n_step_return));
        let discount = column(transitions.iter().map(|t| {
            if t.bootstrap {
                spec.gamma.powi(t.n_used as i32)
            } else {
                0.0
            }
        }));
        let (a_target, logp_target) = policy.sample(&s_target, rng)?;
        let ood = (0..spec.ood_blocks)
            .map(|_| {
                if spec.ood_from_policy {
                    policy.sample(&s, rng).map(|(a, _)| a)
                } else {
                    Ok(uniform_actions(b, d, rng))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (reg_u, reg_s2, reg_a2) = if spec.ntk {
            let second = second.ok_or_else(|| Error::config("NTK regularizer needs a second batch"))?;
            if second.len() != b {
                return Err(Error::config("NTK batches must have equal size"));
            }
            let u = if spec.ood_blocks > 0 && !spec.ood_from_policy {
                None
            } else {
                Some(uniform_actions(b, d, rng))
            };
            let s2 = stack_rows(&second.iter().map(|t| t.s.as_slice()).collect::<Vec<_>>());
            let (a2, _) = policy.sample(&s2, rng)?;
            (u, Some(s2), Some(a2))
        } else {
            (None, None, None)
        };
        let (next_s, next_a) = if spec.dr3 {
            let ns = stack_rows(&transitions.iter().map(|t| t.next_s.as_slice()).collect::<Vec<_>>());
            let (fill, _) = policy.sample(&ns, rng)?;
            let mut na = fill;
            for (i, t) in transitions.iter().enumerate() {
                if let Some(logged) = &t.next_a {
                    for j in 0..d {
                        na[[i, j]] = logged[j];
                    }
                }
            }
            (Some(ns), Some(na))
        } else {
            (None, None)
        };
        Ok(Self {
            s,
            a,
            ret,
            discount,
            s_target,
            a_target,
            logp_target,
            ood,
            reg_u,
            reg_s2,
            reg_a2,
            next_s,
            next_a,
        })
    }

    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.nrows() == 0
    }

    /// Uniform actions used with `s` in the NTK regularizer.
    pub fn ntk_uniform(&self) -> Option<&Mat> {
        self.reg_u.as_ref().or(self.ood.first())
    }
}

/// `y = ret + discount * (Q(s', a') - tau * log pi(a'|s'))`.
pub fn bellman_target(ret: &Mat, discount: &Mat, q_next: &Mat, logp: &Mat, tau: f64) -> Mat {
    let mut y = ret.clone();
    ndarray::Zip::from(&mut y)
        .and(discount)
        .and(q_next)
        .and(logp)
        .for_each(|y, &d, &q, &lp| *y += d * (q - tau * lp));
    y
}

fn eval_q(critic: &dyn QFunction, s: &Mat, a: &Mat, mode: Mode) -> Result<Mat> {
    let mut g = Graph::new();
    let sn = g.constant(s.clone());
    let an = g.constant(a.clone());
    let nodes = critic.forward_on(&mut g, sn, an, mode)?;
    Ok(g.value(nodes.q).clone())
}

/// Targets from one or more (target) critics in eval mode; the minimum is
/// taken across critics.
pub fn td_targets(critics: &[&dyn QFunction], batch: &CriticBatch, tau: f64) -> Result<Mat> {
    let mut q_min: Option<Mat> = None;
    for c in critics {
        let q = eval_q(*c, &batch.s_target, &batch.a_target, Mode::Eval)?;
        q_min = Some(match q_min {
            None => q,
            Some(m) => ndarray::Zip::from(&m).and(&q).map_collect(|&x, &y| x.min(y)),
        });
    }
    let q_next = q_min.unwrap_or_else(|| Array2::zeros((batch.len(), 1)));
    Ok(bellman_target(&batch.ret, &batch.discount, &q_next, &batch.logp_target, tau))
}

/// `1 - exp(-|a - a'|^2)` per row.
pub fn cql_weights(a: &Mat, ood: &Mat) -> Mat {
    let d2 = (a - ood).mapv(|v| v * v).sum_axis(Axis(1));
    d2.mapv(|v| 1.0 - (-v).exp()).insert_axis(Axis(1))
}

/// `0.5 * mean((q - y)^2)`.
pub fn td_loss_node(g: &mut Graph, q: NodeId, y: &Mat) -> Result<NodeId> {
    let yn = g.constant(y.clone());
    let diff = g.sub(q, yn)?;
    let sq = g.square(diff);
    let m = g.mean(sq);
    Ok(g.scale(m, 0.5))
}

/// Mean over OOD blocks of (optionally weighted) `Q(s, a')`, minus the mean
/// data value when `data_term` is set.
pub fn cql_node(
    g: &mut Graph,
    q_data: NodeId,
    q_ood: &[NodeId],
    weights: Option<&[Mat]>,
    data_term: bool,
) -> Result<NodeId> {
    let k = q_ood.len().max(1) as f64;
    let mut acc: Option<NodeId> = None;
    for (i, &q) in q_ood.iter().enumerate() {
        let term = match weights {
            Some(w) => {
                let wn = g.constant(w[i].clone());
                g.mul(q, wn)?
            }
            None => q,
        };
        let m = g.mean(term);
        acc = Some(match acc {
            None => m,
            Some(a) => g.add(a, m)?,
        });
    }
    let ood_term = match acc {
        Some(a) => g.scale(a, 1.0 / k),
        None => g.constant(Array2::zeros((1, 1))),
    };
    if data_term {
        let md = g.mean(q_data);
        g.sub(ood_term, md)
    } else {
        Ok(ood_term)
    }
}

/// Mean squared per-row feature inner product.
pub fn ntk_reg_node(g: &mut Graph, phi_a: NodeId, phi_b: NodeId) -> Result<NodeId> {
    let d = g.row_dot(phi_a, phi_b)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Mean signed per-row feature inner product.
pub fn dr3_node(g: &mut Graph, phi: NodeId, phi_next: NodeId) -> Result<NodeId> {
    let d = g.row_dot(phi, phi_next)?;
    Ok(g.mean(d))
}

/// Which terms enter the critic objective and with what weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub alpha: f64,
    pub beta: f64,
    pub weighted_cql: bool,
    pub cql_data_term: bool,
    pub reg: RegKind,
    pub mode: Mode,
    /// Temperature in the target's entropy bonus.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    None,
    Ntk,
    Dr3,
}

/// Objective nodes plus the targets used.
#[derive(Debug, Clone)]
pub struct Objective {
    pub graph: Graph,
    pub total: NodeId,
    pub td: NodeId,
    pub cql: Option<NodeId>,
    pub reg: Option<NodeId>,
    pub q_data: NodeId,
    pub phi_data: NodeId,
    pub stats: BatchStats,
    pub y: Mat,
}

impl Objective {
    pub fn value(&self, id: Option<NodeId>) -> f64 {
        id.map_or(0.0, |n| self.graph.scalar(n))
    }
}

/// Builds `TD + alpha * CQL + beta * REG` for one critic. Every row the
/// objective touches goes through one forward pass, so batch
/// normalization sees the joint batch. Without external targets `y`, the
/// target rows are evaluated by the same pass and detached.
pub fn critic_objective(
    critic: &dyn QFunction,
    batch: &CriticBatch,
    spec: &ObjectiveSpec,
    y: Option<&Mat>,
) -> Result<Objective> {
    let b = batch.len();
    let mut g = Graph::new();
    let mut s_parts = vec![batch.s.clone()];
    let mut a_parts = vec![batch.a.clone()];
    let target_rows = y.is_none();
    if target_rows {
        s_parts.push(batch.s_target.clone());
        a_parts.push(batch.a_target.clone());
    }
    let use_cql = spec.alpha > 0.0 && !batch.ood.is_empty();
    if use_cql {
        for block in &batch.ood {
            s_parts.push(batch.s.clone());
            a_parts.push(block.clone());
        }
    }
    let use_reg = spec.beta > 0.0 && spec.reg != RegKind::None;
    // the uniform block already in the stack when its first OOD block is reused
    let mut reg_u_block = None;
    if use_reg {
        match spec.reg {
            RegKind::Ntk => {
                let (s2, a2) = batch
                    .reg_s2
                    .as_ref()
                    .zip(batch.reg_a2.as_ref())
                    .ok_or_else(|| Error::config("batch lacks NTK regularizer draws"))?;
                match &batch.reg_u {
                    Some(u) => {
                        s_parts.push(batch.s.clone());
                        a_parts.push(u.clone());
                    }
                    None if use_cql => reg_u_block = Some(1 + target_rows as usize),
                    None => return Err(Error::config("batch lacks uniform NTK actions")),
                }
                s_parts.push(s2.clone());
                a_parts.push(a2.clone());
            }
            RegKind::Dr3 => {
                let (ns, na) = batch
                    .next_s
                    .as_ref()
                    .zip(batch.next_a.as_ref())
                    .ok_or_else(|| Error::config("batch lacks consecutive pairs"))?;
                s_parts.push(ns.clone());
                a_parts.push(na.clone());
            }
            RegKind::None => {}
        }
    }
    let blocks = s_parts.len();
    let s_all = ndarray::concatenate(Axis(0), &s_parts.iter().map(|m| m.view()).collect::<Vec<_>>())
        .map_err(|_| Error::config("state blocks differ in width"))?;
    let a_all = ndarray::concatenate(Axis(0), &a_parts.iter().map(|m| m.view()).collect::<Vec<_>>())
        .map_err(|_| Error::config("action blocks differ in width"))?;
    let sn = g.constant(s_all);
    let an = g.constant(a_all);
    let CriticNodes { q, phi, stats } = critic.forward_on(&mut g, sn, an, spec.mode)?;
    let mut q_blocks = Vec::with_capacity(blocks);
    let mut phi_blocks = Vec::with_capacity(blocks);
    for i in 0..blocks {
        q_blocks.push(g.slice_rows(q, i * b, (i + 1) * b)?);
        phi_blocks.push(g.slice_rows(phi, i * b, (i + 1) * b)?);
    }
    let mut next = 0usize;
    let mut take = || {
        next += 1;
        next - 1
    };
    let data = take();
    let y = match y {
        Some(y) => y.clone(),
        None => {
            let t = take();
            let q_next = g.value(q_blocks[t]).clone();
            bellman_target(&batch.ret, &batch.discount, &q_next, &batch.logp_target, spec.tau)
        }
    };
    let td = td_loss_node(&mut g, q_blocks[data], &y)?;
    let mut total = td;
    let mut cql = None;
    if use_cql {
        let idx: Vec<usize> = batch.ood.iter().map(|_| take()).collect();
        let q_ood: Vec<NodeId> = idx.iter().map(|&i| q_blocks[i]).collect();
        let weights: Option<Vec<Mat>> = spec
            .weighted_cql
            .then(|| batch.ood.iter().map(|o| cql_weights(&batch.a, o)).collect());
        let c = cql_node(&mut g, q_blocks[data], &q_ood, weights.as_deref(), spec.cql_data_term)?;
        let scaled = g.scale(c, spec.alpha);
        total = g.add(total, scaled)?;
        cql = Some(c);
    }
    let mut reg = None;
    if use_reg {
        let r = match spec.reg {
            RegKind::Ntk => {
                let u = match reg_u_block {
                    Some(i) => i,
                    None => take(),
                };
                let pi = take();
                ntk_reg_node(&mut g, phi_blocks[u], phi_blocks[pi])?
            }
            _ => {
                let n = take();
                dr3_node(&mut g, phi_blocks[data], phi_blocks[n])?
            }
        };
        let scaled = g.scale(r, spec.beta);
        total = g.add(total, scaled)?;
        reg = Some(r);
    }
    Ok(Objective {
        total,
        td,
        cql,
        reg,
        q_data: q_blocks[data],
        phi_data: phi_blocks[data],
        stats,
        y,
        graph: g,
    })
}

/// Value of the conservative penalty for fixed OOD draws.
pub fn cql_penalty(
    critic: &dyn QFunction,
    s: &Mat,
    a: &Mat,
    ood: &[Mat],
    weighted: bool,
    data_term: bool,
) -> Result<f64> {
    let mut g = Graph::new();
    let q_data = {
        let sn = g.constant(s.clone());
        let an = g.constant(a.clone());
        critic.forward_on(&mut g, sn, an, Mode::Eval)?.q
    };
    let mut q_ood = Vec::new();
    for block in ood {
        let sn = g.constant(s.clone());
        let an = g.constant(block.clone());
        q_ood.push(critic.forward_on(&mut g, sn, an, Mode::Eval)?.q);
    }
    let w: Option<Vec<Mat>> = weighted.then(|| ood.iter().map(|o| cql_weights(a, o)).collect());
    let c = cql_node(&mut g, q_data, &q_ood, w.as_deref(), data_term)?;
    Ok(g.scalar(c))
}

fn features(critic: &dyn QFunction, g: &mut Graph, s: &Mat, a: &Mat) -> Result<NodeId> {
    let sn = g.constant(s.clone());
    let an = g.constant(a.clone());
    Ok(critic.forward_on(g, sn, an, Mode::Eval)?.phi)
}

/// `mean_i (phi(s_i, u_i) . phi(s2_i, a2_i))^2`.
pub fn ntk_reg_loss(critic: &dyn QFunction, s: &Mat, u: &Mat, s2: &Mat, a2: &Mat) -> Result<f64> {
    let mut g = Graph::new();
    let p1 = features(critic, &mut g, s, u)?;
    let p2 = features(critic, &mut g, s2, a2)?;
    let r = ntk_reg_node(&mut g, p1, p2)?;
    Ok(g.scalar(r))
}

/// `mean_i phi(s_i, a_i) . phi(s'_i, a'_i)`.
pub fn dr3_reg_loss(critic: &dyn QFunction, s: &Mat, a: &Mat, s_next: &Mat, a_next: &Mat) -> Result<f64> {
    let mut g = Graph::new();
    let p1 = features(critic, &mut g, s, a)?;
    let p2 = features(critic, &mut g, s_next, a_next)?;
    let r = dr3_node(&mut g, p1, p2)?;
    Ok(g.scalar(r))
}
