use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    SimplifiedQ,
    SacCql,
    Crossq,
    Dr3,
    Layernorm,
    Bc,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SimplifiedQ => "simplified_q",
            Algorithm::SacCql => "sac_cql",
            Algorithm::Crossq => "crossq",
            Algorithm::Dr3 => "dr3",
            Algorithm::Layernorm => "layernorm",
            Algorithm::Bc => "bc",
        }
    }

    /// Algorithms that bootstrap from a polyak-averaged copy of the critics.
    pub fn uses_target_network(self) -> bool {
        matches!(self, Algorithm::SacCql | Algorithm::Dr3 | Algorithm::Layernorm)
    }
}

/// Distribution of the out-of-distribution actions in the conservative penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    Uniform,
    Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// Temperature stays at `temperature`.
    Fixed,
    /// Temperature tuned towards `target_entropy`.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    /// Weight of the conservative penalty.
    pub alpha: f64,
    /// Weight of the feature regularizer (NTK form or DR3 form).
    pub beta: f64,
    pub n_step: usize,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub updates_per_episode: usize,
    pub ood_action_samples: usize,
    pub mu_mode: MuMode,
    pub weighted_cql: bool,
    /// Keep the `-E[Q(s, a)]` term of the conservative penalty.
    pub cql_data_term: bool,
    /// Only valid for target-network algorithms; defaults to 0.995 there.
    pub target_polyak: Option<f64>,
    pub entropy_mode: EntropyMode,
    /// Fixed temperature, or the starting point when tuned.
    pub temperature: f64,
    /// Defaults to `-dim(A)`.
    pub target_entropy: Option<f64>,
    /// Critics in the ensemble; defaults to 2 with a target network, else 1.
    pub num_critics: Option<usize>,
    pub critic_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::SimplifiedQ,
            alpha: 1.0,
            beta: 0.2,
            n_step: 3,
            gamma: 0.99,
            lr: 3e-4,
            batch_size: 512,
            updates_per_episode: 60,
            ood_action_samples: 4,
            mu_mode: MuMode::Policy,
            weighted_cql: true,
            cql_data_term: false,
            target_polyak: None,
            entropy_mode: EntropyMode::Auto,
            temperature: 0.1,
            target_entropy: None,
            num_critics: None,
            critic_hidden: vec![256, 256],
            policy_hidden: vec![64, 64],
        }
    }
}

impl AgentConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let alg = self.algorithm.name();
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.n_step == 0 {
            return fail("n_step must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return fail(format!("batch_size must be even and positive, got {}", self.batch_size));
        }
        if self.ood_action_samples == 0 {
            return fail("ood_action_samples must be at least 1".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.entropy_mode == EntropyMode::Auto && self.temperature <= 0.0 {
            return fail("tuned temperature needs a positive starting value".into());
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) {
            return fail("critic_hidden needs at least one positive width".into());
        }
        if self.policy_hidden.is_empty() || self.policy_hidden.contains(&0) {
            return fail("policy_hidden needs at least one positive width".into());
        }
        match (self.algorithm.uses_target_network(), self.target_polyak) {
            (false, Some(_)) => {
                return fail(format!("{alg} has no target network; remove target_polyak"))
            }
            (true, Some(p)) if !(p > 0.0 && p <= 1.0) => {
                return fail(format!("target_polyak must lie in (0, 1], got {p}"))
            }
            _ => {}
        }
        if self.num_critics == Some(0) {
            return fail("num_critics must be at least 1".into());
        }
        Ok(())
    }

    pub fn polyak(&self) -> Option<f64> {
        self.algorithm
            .uses_target_network()
            .then(|| self.target_polyak.unwrap_or(0.995))
    }

    pub fn critic_count(&self) -> usize {
        match self.algorithm {
            Algorithm::Bc => 0,
            a => self
                .num_critics
                .unwrap_or(if a.uses_target_network() { 2 } else { 1 }),
        }
    }

    pub fn target_entropy_for(&self, act_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(act_dim as f64))
    }
}
