use serde::{Deserialize, Serialize};

use crate::envs::Trajectory;
use crate::{Error, Result};

/// Normalized per-dimension action frequencies over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionHistogram {
    pub bins: usize,
    pub samples: usize,
    /// `mass[d][k]` is the fraction of actions whose dimension `d` falls in bin `k`.
    pub mass: Vec<Vec<f64>>,
}

impl ActionHistogram {
    /// Lower and upper edge of bin `k`.
    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = 2.0 / self.bins as f64;
        (-1.0 + w * k as f64, -1.0 + w * (k + 1) as f64)
    }

    /// Mass in the two extreme bins of one dimension.
    pub fn bang_bang_index(&self, dim: usize) -> f64 {
        let m = &self.mass[dim];
        if self.bins == 1 {
            m[0]
        } else {
            m[0] + m[self.bins - 1]
        }
    }

    pub fn mean_bang_bang_index(&self) -> f64 {
        let d = self.mass.len();
        (0..d).map(|i| self.bang_bang_index(i)).sum::<f64>() / d as f64
    }
}

/// Histogram of every action taken in `trajectories`.
pub fn action_histogram(trajectories: &[Trajectory], bins: usize) -> Result<ActionHistogram> {
    actions_histogram(trajectories.iter().flat_map(|t| t.actions.iter().map(Vec::as_slice)), bins)
}

/// Histogram of an arbitrary action stream. Values are clipped to `[-1, 1]`.
pub fn actions_histogram<'a>(
    actions: impl IntoIterator<Item = &'a [f64]>,
    bins: usize,
) -> Result<ActionHistogram> {
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    let mut counts: Vec<Vec<u64>> = Vec::new();
    let mut samples = 0usize;
    for a in actions {
        if counts.is_empty() {
            counts = vec![vec![0; bins]; a.len()];
        } else if a.len() != counts.len() {
            return Err(Error::config("actions of different widths in one histogram"));
        }
        for (d, &v) in a.iter().enumerate() {
            let u = (v.clamp(-1.0, 1.0) + 1.0) / 2.0;
            let k = ((u * bins as f64) as usize).min(bins - 1);
            counts[d][k] += 1;
        }
        samples += 1;
    }
    if samples == 0 || counts.is_empty() {
        return Err(Error::config("histogram over an empty action set"));
    }
    let mass = counts
        .into_iter()
        .map(|c| c.into_iter().map(|n| n as f64 / samples as f64).collect())
        .collect();
    Ok(ActionHistogram {
        bins,
        samples,
        mass,
    })
}
