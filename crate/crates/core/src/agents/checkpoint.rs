use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Agent, AgentConfig, Critic, Policy};
use crate::autodiff::AdamState;
use crate::rng::{RngState, SimRng};
use crate::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume an agent bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format_version: u32,
    pub config: AgentConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub policy: Policy,
    pub policy_opt: AdamState,
    pub critics: Vec<Critic>,
    pub critic_opts: Vec<AdamState>,
    pub targets: Vec<Critic>,
    pub log_temperature: Option<f64>,
    pub temperature_opt: AdamState,
    pub rng: RngState,
    pub updates: u64,
}

impl From<&Agent> for AgentCheckpoint {
    fn from(a: &Agent) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config: a.config.clone(),
            obs_dim: a.obs_dim,
            act_dim: a.act_dim,
            policy: a.policy.clone(),
            policy_opt: a.policy_opt.clone(),
            critics: a.critics.clone(),
            critic_opts: a.critic_opts.clone(),
            targets: a.targets.clone(),
            log_temperature: a.log_temperature.is_finite().then_some(a.log_temperature),
            temperature_opt: a.temperature_opt.clone(),
            rng: a.rng.state(),
            updates: a.updates,
        }
    }
}

impl AgentCheckpoint {
    pub fn into_agent(self) -> Result<Agent> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "checkpoint format {} is not supported",
                self.format_version
            )));
        }
        self.config.validate()?;
        for net in self.critics.iter().chain(&self.targets).map(|c| &c.net).chain([&self.policy.net]) {
            net.validate()?;
        }
        Ok(Agent {
            config: self.config,
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            policy: self.policy,
            policy_opt: self.policy_opt,
            critics: self.critics,
            critic_opts: self.critic_opts,
            targets: self.targets,
            log_temperature: self.log_temperature.unwrap_or(f64::NEG_INFINITY),
            temperature_opt: self.temperature_opt,
            rng: SimRng::from_state(&self.rng),
            updates: self.updates,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl Agent {
    pub fn save(&self, path: &Path) -> Result<()> {
        AgentCheckpoint::from(self).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        AgentCheckpoint::load(path)?.into_agent()
    }
}
