//! N-step transitions and the offline/online buffer pair.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{load_dataset, save_dataset, Trajectory};
use crate::rng::{RngState, SimRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    /// `sum_{n < n_used} gamma^n r_{t+n}`
    pub n_step_return: f64,
    /// `s_{t + n_used}`
    pub s_target: Vec<f64>,
    pub n_used: usize,
    pub bootstrap: bool,
    /// The window ends on the step that raised a fault.
    pub fault: bool,
    /// `s_{t+1}`
    pub next_s: Vec<f64>,
    /// Logged `a_{t+1}`, absent on the last step.
    pub next_a: Option<Vec<f64>>,
}

/// N-step assembly where fault truncation is bootstrapped like horizon truncation.
pub fn assemble_nstep(traj: &Trajectory, n: usize, gamma: f64) -> Vec<Transition> {
    assemble_nstep_with(traj, n, gamma, true)
}

/// With `bootstrap_on_fault = false` a fault is treated as absorbing: windows
/// that end on the faulting step carry no bootstrap.
pub fn assemble_nstep_with(
    traj: &Trajectory,
    n: usize,
    gamma: f64,
    bootstrap_on_fault: bool,
) -> Vec<Transition> {
    let len = traj.len();
    let n = n.max(1);
    (0..len)
        .map(|t| {
            let n_used = n.min(len - t);
            let mut ret = 0.0;
            let mut disc = 1.0;
            for k in 0..n_used {
                ret += disc * traj.rewards[t + k];
                disc *= gamma;
            }
            let ends_on_fault = traj.fault && t + n_used == len;
            Transition {
                s: traj.observations[t].clone(),
                a: traj.actions[t].clone(),
                n_step_return: ret,
                s_target: traj.observations[t + n_used].clone(),
                n_used,
                bootstrap: bootstrap_on_fault || !ends_on_fault,
                fault: ends_on_fault,
                next_s: traj.observations[t + 1].clone(),
                next_a: traj.actions.get(t + 1).cloned(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferConfig {
    pub n_step: usize,
    pub gamma: f64,
    /// Half of every batch from each store once both are non-empty.
    pub symmetric: bool,
    /// Copy successful online episodes into the offline store.
    pub sil: bool,
    pub bootstrap_on_fault: bool,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            n_step: 3,
            gamma: 0.99,
            symmetric: true,
            sil: true,
            bootstrap_on_fault: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Demonstration,
    /// Copied from the online store; carries the online episode id.
    SelfImitation(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Offline,
    Online,
}

#[derive(Debug, Clone, Default)]
struct Store {
    trajectories: Vec<Trajectory>,
    transitions: Vec<Transition>,
}

impl Store {
    fn push(&mut self, traj: Trajectory, cfg: &BufferConfig) {
        self.transitions.extend(assemble_nstep_with(
            &traj,
            cfg.n_step,
            cfg.gamma,
            cfg.bootstrap_on_fault,
        ));
        self.trajectories.push(traj);
    }
}

/// Sampled transitions with the store each came from.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub items: Vec<&'a Transition>,
    pub sources: Vec<Source>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, source: Source) -> usize {
        self.sources.iter().filter(|&&s| s == source).count()
    }
}

#[derive(Debug, Clone)]
pub struct DualBuffer {
    config: BufferConfig,
    offline: Store,
    origins: Vec<Origin>,
    online: Store,
    committed: BTreeSet<usize>,
    rng: SimRng,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: BufferConfig,
    offline_origins: Vec<Origin>,
    committed: Vec<usize>,
    rng: RngState,
}

impl DualBuffer {
    pub fn new(config: BufferConfig, seed: u64) -> Self {
        Self {
            config,
            offline: Store::default(),
            origins: Vec::new(),
            online: Store::default(),
            committed: BTreeSet::new(),
            rng: SimRng::with_stream(seed, 7),
        }
    }

    pub fn config(&self) -> &BufferConfig {
        &self.config
    }

    pub fn add_offline(&mut self, traj: Trajectory) {
        self.offline.push(traj, &self.config);
        self.origins.push(Origin::Demonstration);
    }

    /// Appends a finished episode to the online store and returns its id.
    pub fn add_online_episode(&mut self, traj: Trajectory) -> usize {
        self.online.push(traj, &self.config);
        self.online.trajectories.len() - 1
    }

    /// Copies online episode `id` into the offline store when its return is
    /// positive. Each episode is committed at most once.
    pub fn sil_commit(&mut self, id: usize) -> bool {
        if !self.config.sil || self.committed.contains(&id) {
            return false;
        }
        let Some(traj) = self.online.trajectories.get(id) else {
            return false;
        };
        if traj.ret() <= 0.0 {
            return false;
        }
        let traj = traj.clone();
        self.offline.push(traj, &self.config);
        self.origins.push(Origin::SelfImitation(id));
        self.committed.insert(id);
        true
    }

    pub fn offline_trajectories(&self) -> &[Trajectory] {
        &self.offline.trajectories
    }

    pub fn online_trajectories(&self) -> &[Trajectory] {
        &self.online.trajectories
    }

    pub fn offline_origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn offline_transitions(&self) -> &[Transition] {
        &self.offline.transitions
    }

    pub fn online_transitions(&self) -> &[Transition] {
        &self.online.transitions
    }

    pub fn rng_state(&self) -> RngState {
        self.rng.state()
    }

    pub fn set_rng_state(&mut self, state: &RngState) {
        self.rng = SimRng::from_state(state);
    }

    /// Draws `batch_size` transitions. When both stores hold data and
    /// symmetric sampling is on, exactly half come from each.
    pub fn sample(&mut self, batch_size: usize) -> Result<Batch<'_>> {
        let ids = self.sample_ids(batch_size)?;
        Ok(self.resolve(&ids))
    }

    /// The draw behind [`DualBuffer::sample`], as `(store, index)` pairs.
    pub fn sample_ids(&mut self, batch_size: usize) -> Result<Vec<(Source, usize)>> {
        if batch_size % 2 != 0 {
            return Err(Error::config(format!("batch size {batch_size} must be even")));
        }
        let n_off = self.offline.transitions.len();
        let n_on = self.online.transitions.len();
        if n_off + n_on == 0 {
            return Err(Error::BufferEmpty);
        }
        let mut ids = Vec::with_capacity(batch_size);
        if self.config.symmetric && n_off > 0 && n_on > 0 {
            for _ in 0..batch_size / 2 {
                ids.push((Source::Offline, self.rng.below(n_off)));
            }
            for _ in 0..batch_size / 2 {
                ids.push((Source::Online, self.rng.below(n_on)));
            }
        } else {
            for _ in 0..batch_size {
                let k = self.rng.below(n_off + n_on);
                ids.push(if k < n_off {
                    (Source::Offline, k)
                } else {
                    (Source::Online, k - n_off)
                });
            }
        }
        Ok(ids)
    }

    pub fn resolve(&self, ids: &[(Source, usize)]) -> Batch<'_> {
        Batch {
            items: ids
                .iter()
                .map(|&(src, i)| match src {
                    Source::Offline => &self.offline.transitions[i],
                    Source::Online => &self.online.transitions[i],
                })
                .collect(),
            sources: ids.iter().map(|&(src, _)| src).collect(),
        }
    }

    /// Writes `offline.jsonl`, `online.jsonl` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_dataset(&dir.join("offline.jsonl"), &self.offline.trajectories)?;
        save_dataset(&dir.join("online.jsonl"), &self.online.trajectories)?;
        let manifest = Manifest {
            config: self.config.clone(),
            offline_origins: self.origins.clone(),
            committed: self.committed.iter().copied().collect(),
            rng: self.rng.state(),
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let offline = load_dataset(&dir.join("offline.jsonl"))?;
        let online = load_dataset(&dir.join("online.jsonl"))?;
        if offline.len() != manifest.offline_origins.len() {
            return Err(Error::config(format!(
                "manifest lists {} offline trajectories, file holds {}",
                manifest.offline_origins.len(),
                offline.len()
            )));
        }
        let mut buf = DualBuffer::new(manifest.config, 0);
        for t in offline {
            buf.offline.push(t, &buf.config);
        }
        for t in online {
            buf.online.push(t, &buf.config);
        }
        buf.origins = manifest.offline_origins;
        buf.committed = manifest.committed.into_iter().collect();
        buf.rng = SimRng::from_state(&manifest.rng);
        Ok(buf)
    }
}
