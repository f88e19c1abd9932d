//! Tanh-squashed diagonal Gaussian actor.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, LayerSpec, Mat, MlpParams, Mode, NodeId};
use crate::rng::SimRng;
use crate::Result;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Emits `[mean | log_std]` per row.
    pub net: MlpParams,
    pub act_dim: usize,
}

/// Nodes of a reparameterized sample.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample {
    pub action: NodeId,
    /// `[B x 1]`
    pub log_prob: NodeId,
    pub mean: NodeId,
}

impl Policy {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut SimRng) -> Result<Self> {
        let mut specs: Vec<LayerSpec> =
            hidden.iter().map(|&w| LayerSpec::new(w, Activation::Tanh)).collect();
        specs.push(LayerSpec::new(2 * act_dim, Activation::Identity));
        Ok(Self {
            net: MlpParams::new(obs_dim, &specs, rng)?,
            act_dim,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Pre-squash mean and clamped log-std nodes.
    pub fn head(&self, g: &mut Graph, obs: NodeId) -> Result<(NodeId, NodeId)> {
        let out = self.net.forward_on(g, obs, Mode::Eval)?.output;
        let d = self.act_dim;
        let mean = g.slice_cols(out, 0, d)?;
        let raw = g.slice_cols(out, d, 2 * d)?;
        let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        Ok((mean, log_std))
    }

    /// `a = tanh(mean + exp(log_std) * noise)` with its log-density, including
    /// the change-of-variables term `-sum log(1 - a^2)`.
    pub fn sample_on(&self, g: &mut Graph, obs: NodeId, noise: &Mat) -> Result<PolicySample> {
        let (mean, log_std) = self.head(g, obs)?;
        let eps = g.constant(noise.clone());
        let std = g.exp(log_std);
        let spread = g.mul(std, eps)?;
        let u = g.add(mean, spread)?;
        let action = g.tanh(u);
        // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
        let m2u = g.scale(u, -2.0);
        let sp = g.softplus(m2u);
        let u_sp = g.add(u, sp)?;
        let jac = g.add_scalar(u_sp, -std::f64::consts::LN_2);
        let jac = g.scale(jac, 2.0);
        // per-dimension: -eps^2/2 - log_std - ln(2 pi)/2 + 2 (u + softplus(-2u) - ln 2)
        let quad = noise.mapv(|e| -0.5 * e * e - HALF_LN_2PI);
        let quad = g.constant(quad);
        let base = g.sub(quad, log_std)?;
        let per_dim = g.add(base, jac)?;
        let log_prob = g.row_sum(per_dim);
        Ok(PolicySample {
            action,
            log_prob,
            mean,
        })
    }

    /// Standard normal noise shaped for `rows` samples.
    pub fn draw_noise(&self, rows: usize, rng: &mut SimRng) -> Mat {
        Array2::from_shape_fn((rows, self.act_dim), |_| rng.normal())
    }

    /// Sampled actions and log-densities (values only).
    pub fn sample(&self, obs: &Mat, rng: &mut SimRng) -> Result<(Mat, Mat)> {
        let noise = self.draw_noise(obs.nrows(), rng);
        self.sample_with(obs, &noise)
    }

    pub fn sample_with(&self, obs: &Mat, noise: &Mat) -> Result<(Mat, Mat)> {
        let mut g = Graph::new();
        let x = g.constant(obs.clone());
        let s = self.sample_on(&mut g, x, noise)?;
        Ok((g.value(s.action).clone(), g.value(s.log_prob).clone()))
    }

    /// `tanh(mean)`, used for evaluation and behaviour cloning.
    pub fn deterministic(&self, obs: &Mat) -> Result<Mat> {
        let out = self.net.predict(obs, Mode::Eval)?;
        Ok(out.slice(ndarray::s![.., ..self.act_dim]).mapv(f64::tanh))
    }

    /// Log-density of squashed actions `a` in `(-1, 1)`.
    pub fn log_prob(&self, obs: &Mat, actions: &Mat) -> Result<Vec<f64>> {
        let out = self.net.predict(obs, Mode::Eval)?;
        let d = self.act_dim;
        Ok(out
            .axis_iter(Axis(0))
            .zip(actions.axis_iter(Axis(0)))
            .map(|(o, a)| {
                (0..d)
                    .map(|j| {
                        let ls = o[d + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
                        let u = a[j].atanh();
                        let z = (u - o[j]) / ls.exp();
                        -0.5 * z * z - ls - HALF_LN_2PI - (1.0 - a[j] * a[j]).ln()
                    })
                    .sum()
            })
            .collect())
    }

    /// Clamped log-std values, `[B x d]`.
    pub fn log_std(&self, obs: &Mat) -> Result<Mat> {
        let out = self.net.predict(obs, Mode::Eval)?;
        Ok(out
            .slice(ndarray::s![.., self.act_dim..])
            .mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)))
    }
}
