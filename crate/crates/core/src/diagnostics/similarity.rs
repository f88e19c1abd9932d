use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::ProbeSet;
use crate::agents::QFunction;
use crate::autodiff::{Graph, Mat, Mode};
use crate::{Error, Result};

/// Clipped feature inner products over one probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub pairs: usize,
    pub clip: f64,
    /// Entry `(i, j)` is `phi_i . phi_j` clamped to `[-clip, clip]`.
    pub matrix: Mat,
    pub mean_abs: f64,
    pub max: f64,
    pub min: f64,
    /// `(threshold, fraction of entries with |entry| > threshold)`.
    pub above: Vec<(f64, f64)>,
}

const THRESHOLDS: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

fn eval_nodes(critic: &dyn QFunction, probe: &ProbeSet) -> Result<(Vec<f64>, Mat)> {
    let mut g = Graph::new();
    let s = g.constant(probe.obs.clone());
    let a = g.constant(probe.act.clone());
    let nodes = critic.forward_on(&mut g, s, a, Mode::Eval)?;
    let q = g.value(nodes.q).index_axis(Axis(1), 0).to_vec();
    Ok((q, g.value(nodes.phi).clone()))
}

pub fn feature_similarity(
    critic: &dyn QFunction,
    probe: &ProbeSet,
    clip: f64,
) -> Result<SimilarityReport> {
    if probe.len() < 2 {
        return Err(Error::config("feature similarity needs at least two pairs"));
    }
    if !(clip > 0.0) {
        return Err(Error::config("similarity clip must be positive"));
    }
    let (_, phi) = eval_nodes(critic, probe)?;
    let matrix = phi.dot(&phi.t()).mapv(|v| v.clamp(-clip, clip));
    let n = matrix.len() as f64;
    let mean_abs = matrix.iter().map(|v| v.abs()).sum::<f64>() / n;
    let max = matrix.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = matrix.iter().copied().fold(f64::INFINITY, f64::min);
    let above = THRESHOLDS
        .iter()
        .map(|&t| (t, matrix.iter().filter(|v| v.abs() > t).count() as f64 / n))
        .collect();
    Ok(SimilarityReport {
        pairs: probe.len(),
        clip,
        matrix,
        mean_abs,
        max,
        min,
        above,
    })
}

/// Probe Q-values at one checkpoint, next to the largest realizable return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTrace {
    pub step: u64,
    pub values: Vec<f64>,
    pub gamma: f64,
    pub bound: f64,
}

impl QTrace {
    pub fn fraction_below(&self) -> f64 {
        if self.values.is_empty() {
            return 1.0;
        }
        self.values.iter().filter(|&&q| q < self.bound).count() as f64 / self.values.len() as f64
    }

    /// Whether any probe value reaches the bound or is not finite.
    pub fn violates(&self) -> bool {
        self.values.iter().any(|q| !q.is_finite() || *q >= self.bound)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn q_trace(critic: &dyn QFunction, probe: &ProbeSet, gamma: f64, step: u64) -> Result<QTrace> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::config(format!("discount {gamma} outside [0, 1)")));
    }
    let (values, _) = eval_nodes(critic, probe)?;
    Ok(QTrace {
        step,
        values,
        gamma,
        bound: 1.0 / (1.0 - gamma),
    })
}
