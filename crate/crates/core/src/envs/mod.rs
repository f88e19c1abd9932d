//! Toy continuous-control tasks with fixed horizons, scripted demonstrators
//! and trajectory datasets.

mod dataset;
mod grasp;
mod reacher;

use serde::{Deserialize, Serialize};

pub use dataset::{
    collect_demonstrations, load_dataset, rollout, save_dataset, Behaviour, Demonstrator,
    RandomBehaviour, TrajMeta, Trajectory,
};
pub use grasp::{GraspEnv, GraspParams};
pub use reacher::{reacher_expert_action, render_arrow, ReacherEnv, ReacherParams, ARROW_SIDE};

use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub horizon: usize,
}

/// Observable part of an environment plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub t: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Horizon reached or fault.
    pub truncated: bool,
    /// Workspace violation (protective-stop analogue).
    pub fault: bool,
}

pub trait Environment {
    fn spec(&self) -> EnvSpec;

    /// Starts a new episode; the seed fixes every random choice made here.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances one step. Actions are clipped to `[-1, 1]` per component.
    fn step(&mut self, action: &[f64]) -> StepResult;

    fn state(&self) -> &EnvState;

    /// Action of the scripted demonstrator at the current state.
    fn demonstrator_action(&self, rng: &mut SimRng) -> Vec<f64>;

    /// Whether an episode with this trajectory counts as a success.
    fn is_success(&self, traj: &Trajectory) -> bool {
        traj.ret() > 0.0
    }
}

/// Serializable environment selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Reacher(ReacherParams),
    Grasp(GraspParams),
}

impl EnvConfig {
    pub fn build(&self) -> Box<dyn Environment> {
        match self {
            EnvConfig::Reacher(p) => Box::new(ReacherEnv::new(p.clone())),
            EnvConfig::Grasp(p) => Box::new(GraspEnv::new(p.clone())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Reacher(p) if p.image => "reacher_image",
            EnvConfig::Reacher(_) => "reacher",
            EnvConfig::Grasp(_) => "grasp",
        }
    }
}

pub(crate) fn clip_action(action: &[f64], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| action.get(i).copied().unwrap_or(0.0).clamp(-1.0, 1.0))
        .collect()
}
