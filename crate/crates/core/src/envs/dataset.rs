use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Environment;
use crate::rng::{derive_seed, SimRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajMeta {
    pub env: String,
    pub seed: u64,
    pub demonstrator: String,
    pub horizon: usize,
}

/// One episode: `observations` has one more entry than `actions` and
/// `rewards` (the final observation after the last step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub fault: bool,
    pub meta: TrajMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn ret(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
    }
}

/// Anything that picks actions during a rollout.
pub trait Behaviour {
    fn name(&self) -> String;

    /// Called before every episode with the episode seed.
    fn begin_episode(&mut self, _seed: u64) {}

    fn act(&mut self, env: &dyn Environment, observation: &[f64]) -> Vec<f64>;
}

/// The environment's scripted controller.
#[derive(Debug, Clone)]
pub struct Demonstrator {
    rng: SimRng,
}

impl Demonstrator {
    pub fn new() -> Self {
        Self { rng: SimRng::new(0) }
    }
}

impl Default for Demonstrator {
    fn default() -> Self {
        Self::new()
    }
}

impl Behaviour for Demonstrator {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn begin_episode(&mut self, seed: u64) {
        self.rng = SimRng::new(derive_seed(seed, 0xD3E0));
    }

    fn act(&mut self, env: &dyn Environment, _observation: &[f64]) -> Vec<f64> {
        env.demonstrator_action(&mut self.rng)
    }
}

/// Independent uniform actions in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct RandomBehaviour {
    rng: SimRng,
}

impl RandomBehaviour {
    pub fn new() -> Self {
        Self { rng: SimRng::new(0) }
    }
}

impl Default for RandomBehaviour {
    fn default() -> Self {
        Self::new()
    }
}

impl Behaviour for RandomBehaviour {
    fn name(&self) -> String {
        "uniform_random".into()
    }

    fn begin_episode(&mut self, seed: u64) {
        self.rng = SimRng::new(derive_seed(seed, 0x5A5A));
    }

    fn act(&mut self, env: &dyn Environment, _observation: &[f64]) -> Vec<f64> {
        (0..env.spec().act_dim)
            .map(|_| self.rng.uniform(-1.0, 1.0))
            .collect()
    }
}

/// Runs one episode of at most `max_steps` steps.
pub fn rollout(
    env: &mut dyn Environment,
    behaviour: &mut dyn Behaviour,
    seed: u64,
    max_steps: usize,
) -> Trajectory {
    let spec = env.spec();
    behaviour.begin_episode(seed);
    let mut obs = env.reset(seed);
    let mut traj = Trajectory {
        observations: vec![obs.clone()],
        actions: Vec::new(),
        rewards: Vec::new(),
        fault: false,
        meta: TrajMeta {
            env: spec.name,
            seed,
            demonstrator: behaviour.name(),
            horizon: spec.horizon,
        },
    };
    for _ in 0..max_steps.min(spec.horizon) {
        let action = behaviour.act(&*env, &obs);
        let step = env.step(&action);
        traj.actions.push(action);
        traj.rewards.push(step.reward);
        traj.observations.push(step.observation.clone());
        obs = step.observation;
        if step.fault {
            traj.fault = true;
        }
        if step.truncated {
            break;
        }
    }
    traj
}

/// Collects exactly `count` episodes. With `success_filter`, failed episodes
/// are discarded and retried until `retry_budget` extra attempts are used up.
pub fn collect_demonstrations(
    env: &mut dyn Environment,
    behaviour: &mut dyn Behaviour,
    count: usize,
    horizon: usize,
    success_filter: bool,
    seed: u64,
    retry_budget: usize,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(count);
    let mut attempt = 0u64;
    let mut failures = 0usize;
    while out.len() < count {
        let traj = rollout(env, behaviour, derive_seed(seed, attempt), horizon);
        attempt += 1;
        if !success_filter || env.is_success(&traj) {
            out.push(traj);
        } else {
            failures += 1;
            if failures > retry_budget {
                return Err(Error::Collection(format!(
                    "{} produced {} of {count} successes before exceeding the retry budget of {retry_budget}",
                    behaviour.name(),
                    out.len()
                )));
            }
        }
    }
    Ok(out)
}

/// Writes trajectories as JSON lines, one record per trajectory.
pub fn save_dataset(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in trajectories {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Vec<Trajectory>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        if traj.observations.len() != traj.actions.len() + 1
            || traj.rewards.len() != traj.actions.len()
        {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                msg: "inconsistent trajectory lengths".into(),
            });
        }
        out.push(traj);
    }
    Ok(out)
}
