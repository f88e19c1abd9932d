//! Planar point reacher: the position integrates a clipped velocity command.
//!
//! Observation layout:
//! * state variant: `[x, y, goal_x - x, goal_y - y]`
//! * image variant: `[x, y, arrow pixels (16 x 16, row-major)]`

use serde::{Deserialize, Serialize};

use super::{clip_action, EnvSpec, EnvState, Environment, StepResult, Trajectory};
use crate::rng::SimRng;

pub const ARROW_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReacherParams {
    pub horizon: usize,
    pub dt: f64,
    /// Gain of the linear demonstrator.
    pub gain: f64,
    /// Goals are drawn from `[-goal_range, goal_range]^2`.
    pub goal_range: f64,
    /// Starts are drawn from `[-start_range, start_range]^2`.
    pub start_range: f64,
    /// Replace the goal offset with a rendered arrow.
    pub image: bool,
    pub demo_noise: f64,
    /// Final distance below which an episode counts as a success.
    pub success_radius: f64,
}

impl Default for ReacherParams {
    fn default() -> Self {
        Self {
            horizon: 50,
            dt: 0.1,
            gain: 2.0,
            goal_range: 0.8,
            start_range: 0.5,
            image: false,
            demo_noise: 0.0,
            success_radius: 0.05,
        }
    }
}

/// `clip(K (goal - current), -1, 1)` per component.
pub fn reacher_expert_action(current: [f64; 2], goal: [f64; 2], gain: f64) -> [f64; 2] {
    [
        (gain * (goal[0] - current[0])).clamp(-1.0, 1.0),
        (gain * (goal[1] - current[1])).clamp(-1.0, 1.0),
    ]
}

/// Rasterizes an arrow from the image center along `delta`. Length is
/// proportional to `|delta|` (saturating), intensity falls off linearly with
/// distance to the segment. Pixel values lie in `[0, 1]`.
pub fn render_arrow(delta: [f64; 2]) -> Vec<f64> {
    const PIXELS_PER_UNIT: f64 = 5.0;
    const MAX_LEN: f64 = 7.5;
    let norm = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
    let len = (norm * PIXELS_PER_UNIT).min(MAX_LEN);
    // raster coordinates: column grows with x, row grows with -y
    let (vx, vy) = if norm > 0.0 {
        (delta[0] / norm * len, -delta[1] / norm * len)
    } else {
        (0.0, 0.0)
    };
    let vv = vx * vx + vy * vy;
    let half = ARROW_SIDE as f64 / 2.0 - 0.5;
    let mut img = vec![0.0; ARROW_SIDE * ARROW_SIDE];
    for r in 0..ARROW_SIDE {
        for c in 0..ARROW_SIDE {
            // pixel center relative to the image center; exact in binary
            let qx = c as f64 - half;
            let qy = r as f64 - half;
            let t = if vv > 0.0 {
                ((qx * vx + qy * vy) / vv).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let dx = qx - t * vx;
            let dy = qy - t * vy;
            let dist = (dx * dx + dy * dy).sqrt();
            img[r * ARROW_SIDE + c] = (1.25 - dist).clamp(0.0, 1.0);
        }
    }
    img
}

#[derive(Debug, Clone)]
pub struct ReacherEnv {
    params: ReacherParams,
    pos: [f64; 2],
    goal: [f64; 2],
    state: EnvState,
}

impl ReacherEnv {
    pub fn new(params: ReacherParams) -> Self {
        let horizon = params.horizon;
        let mut env = Self {
            params,
            pos: [0.0; 2],
            goal: [0.0; 2],
            state: EnvState {
                observation: Vec::new(),
                t: 0,
                horizon,
            },
        };
        env.state.observation = env.observe();
        env
    }

    pub fn params(&self) -> &ReacherParams {
        &self.params
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    /// Places the point and goal directly (tests and diagnostics).
    pub fn set_positions(&mut self, pos: [f64; 2], goal: [f64; 2]) {
        self.pos = pos;
        self.goal = goal;
        self.state.observation = self.observe();
    }

    pub fn distance(&self) -> f64 {
        let dx = self.goal[0] - self.pos[0];
        let dy = self.goal[1] - self.pos[1];
        (dx * dx + dy * dy).sqrt()
    }

    fn observe(&self) -> Vec<f64> {
        let delta = [self.goal[0] - self.pos[0], self.goal[1] - self.pos[1]];
        let mut obs = vec![self.pos[0], self.pos[1]];
        if self.params.image {
            obs.extend(render_arrow(delta));
        } else {
            obs.extend(delta);
        }
        obs
    }
}

impl Environment for ReacherEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: if self.params.image { "reacher_image" } else { "reacher" }.into(),
            obs_dim: if self.params.image { 2 + ARROW_SIDE * ARROW_SIDE } else { 4 },
            act_dim: 2,
            horizon: self.params.horizon,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = SimRng::new(seed);
        let s = self.params.start_range;
        let g = self.params.goal_range;
        self.pos = [rng.uniform(-s, s), rng.uniform(-s, s)];
        self.goal = [rng.uniform(-g, g), rng.uniform(-g, g)];
        self.state.t = 0;
        self.state.observation = self.observe();
        self.state.observation.clone()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let a = clip_action(action, 2);
        self.pos[0] += self.params.dt * a[0];
        self.pos[1] += self.params.dt * a[1];
        self.state.t += 1;
        self.state.observation = self.observe();
        StepResult {
            observation: self.state.observation.clone(),
            reward: -self.distance(),
            truncated: self.state.t >= self.params.horizon,
            fault: false,
        }
    }

    fn state(&self) -> &EnvState {
        &self.state
    }

    fn demonstrator_action(&self, rng: &mut SimRng) -> Vec<f64> {
        let a = reacher_expert_action(self.pos, self.goal, self.params.gain);
        let sigma = self.params.demo_noise;
        a.iter()
            .map(|v| {
                if sigma > 0.0 {
                    (v + sigma * rng.normal()).clamp(-1.0, 1.0)
                } else {
                    *v
                }
            })
            .collect()
    }

    /// Success means ending within `success_radius` of the goal.
    fn is_success(&self, traj: &Trajectory) -> bool {
        traj.rewards
            .last()
            .is_some_and(|r| -r < self.params.success_radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expert_action_formula() {
        assert_eq!(reacher_expert_action([0.0, 0.0], [1.0, -0.2], 2.0), [1.0, -0.4]);
        assert_eq!(reacher_expert_action([0.3, 0.3], [0.3, 0.3], 2.0), [0.0, 0.0]);
        assert_eq!(ReacherParams::default().gain, 2.0);
    }

    #[test]
    fn zero_delta_lights_only_the_anchor() {
        let img = render_arrow([0.0, 0.0]);
        let lit: Vec<usize> = (0..img.len()).filter(|&i| img[i] > 0.0).collect();
        let c = ARROW_SIDE / 2;
        let anchor = [
            (c - 1) * ARROW_SIDE + c - 1,
            (c - 1) * ARROW_SIDE + c,
            c * ARROW_SIDE + c - 1,
            c * ARROW_SIDE + c,
        ];
        assert_eq!(lit, anchor.to_vec());
    }
}
