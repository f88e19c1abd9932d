use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::AgentConfig;
use crate::diagnostics::{PROBE_PAIRS, SIMILARITY_CLIP};
use crate::envs::{EnvConfig, GraspParams};
use crate::replay::BufferConfig;
use crate::{Error, Result};

/// Buffer switches used by the ablations. Horizon and discount come from
/// the agent configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayOptions {
    pub symmetric: bool,
    pub sil: bool,
    pub bootstrap_on_fault: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        let b = BufferConfig::default();
        Self {
            symmetric: b.symmetric,
            sil: b.sil,
            bootstrap_on_fault: b.bootstrap_on_fault,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsCadence {
    /// Offline gradient steps between probe evaluations; 0 disables them.
    pub offline_every: usize,
    /// Online episodes between probe evaluations; 0 disables them.
    pub online_every: usize,
    pub probe_pairs: usize,
    pub similarity_clip: f64,
    pub histogram_bins: usize,
    pub field_grid: usize,
}

impl Default for DiagnosticsCadence {
    fn default() -> Self {
        Self {
            offline_every: 1000,
            online_every: 10,
            probe_pairs: PROBE_PAIRS,
            similarity_clip: SIMILARITY_CLIP,
            histogram_bins: 20,
            field_grid: 21,
        }
    }
}

/// One experiment: environment, learner, protocol sizes and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub replay: ReplayOptions,
    /// Number of successful demonstrations collected.
    pub demonstrations: usize,
    /// Failed demonstrator attempts tolerated before collection aborts.
    pub demo_retry_budget: usize,
    pub offline_steps: usize,
    pub online_episodes: usize,
    pub eval_attempts: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Offline gradient steps averaged into one metrics row.
    pub log_every: usize,
    pub diagnostics: DiagnosticsCadence,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::Grasp(GraspParams::default()),
            agent: AgentConfig::default(),
            replay: ReplayOptions::default(),
            demonstrations: 50,
            demo_retry_budget: 200,
            offline_steps: 20_000,
            online_episodes: 200,
            eval_attempts: 50,
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs"),
            log_every: 100,
            diagnostics: DiagnosticsCadence::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be positive"));
        }
        if self.diagnostics.probe_pairs < 2 {
            return Err(Error::config("diagnostics.probe_pairs must be at least 2"));
        }
        if !(self.diagnostics.similarity_clip > 0.0) {
            return Err(Error::config("diagnostics.similarity_clip must be positive"));
        }
        if self.diagnostics.histogram_bins == 0 || self.diagnostics.field_grid < 2 {
            return Err(Error::config("histogram_bins must be >= 1 and field_grid >= 2"));
        }
        Ok(())
    }

    pub fn buffer_config(&self) -> BufferConfig {
        BufferConfig {
            n_step: self.agent.n_step,
            gamma: self.agent.gamma,
            symmetric: self.replay.symmetric,
            sil: self.replay.sil,
            bootstrap_on_fault: self.replay.bootstrap_on_fault,
        }
    }

    /// Parses a JSON document; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies `key.path=value` assignments in order. Values are read as
    /// JSON when they parse and as strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            apply_override(&mut doc, o.as_ref())?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config(format!("override {assignment:?} has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override {key:?}: {part:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(Error::config(format!("override {key:?}: unknown key {part:?}")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| Error::config(format!("override {key:?}: unknown key {part:?}")))?;
    }
    Ok(())
}
