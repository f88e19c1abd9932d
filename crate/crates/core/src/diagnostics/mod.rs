//! Analysis instruments. Every function here reads a snapshot and leaves the
//! agent untouched.

mod field;
mod histogram;
mod report;
mod similarity;
mod stats;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use field::{q_action_gradient_field, FieldPoint, GradientField};
pub use histogram::{action_histogram, actions_histogram, ActionHistogram};
pub use report::{
    read_csv_table, write_field_csv, write_histogram_csv, write_q_trace_csv,
    write_run_statistics_csv, write_similarity_csv, CsvTable,
};
pub use similarity::{feature_similarity, q_trace, QTrace, SimilarityReport};
pub use stats::{
    final_rate, interquartile_mean, percentile, run_statistics, run_statistics_with,
    seed_bootstrap_ci, CurvePoint, EpisodeRecord, RunStatistics, SeedCurve, StatsConfig,
};

use crate::autodiff::Mat;
use crate::envs::{rollout, Environment, RandomBehaviour};
use crate::rng::{derive_seed, SimRng};
use crate::{Error, Result};

/// Default probe-set size and similarity clip.
pub const PROBE_PAIRS: usize = 512;
pub const SIMILARITY_CLIP: f64 = 10_000.0;

/// A frozen set of state-action pairs evaluated at every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub obs: Mat,
    pub act: Mat,
}

impl ProbeSet {
    pub fn new(obs: Mat, act: Mat) -> Result<Self> {
        if obs.nrows() != act.nrows() {
            return Err(Error::config(format!(
                "probe set has {} states but {} actions",
                obs.nrows(),
                act.nrows()
            )));
        }
        Ok(Self { obs, act })
    }

    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.nrows() == 0
    }

    /// `count` pairs drawn without replacement from uniform-random-policy
    /// rollouts. The same seed always yields the same set.
    pub fn from_random_rollouts(env: &mut dyn Environment, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::config("probe set needs at least one pair"));
        }
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut behaviour = RandomBehaviour::new();
        let mut episode = 0u64;
        while pairs.len() < 2 * count {
            let t = rollout(env, &mut behaviour, derive_seed(seed, episode), usize::MAX);
            episode += 1;
            pairs.extend(t.observations.into_iter().zip(t.actions));
        }
        let mut rng = SimRng::new(derive_seed(seed, 0x9B0B));
        for i in 0..count {
            let j = i + rng.below(pairs.len() - i);
            pairs.swap(i, j);
        }
        pairs.truncate(count);
        let (od, ad) = (pairs[0].0.len(), pairs[0].1.len());
        let obs = Array2::from_shape_fn((count, od), |(i, j)| pairs[i].0[j]);
        let act = Array2::from_shape_fn((count, ad), |(i, j)| pairs[i].1[j]);
        Self::new(obs, act)
    }
}
