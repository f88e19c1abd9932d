//! Point gripper over a bin in a vertical plane.
//!
//! Observation: `[gripper_x, gripper_y, item_x - gripper_x, item_y - gripper_y, holding]`,
//! where the perceived item position carries a horizontal offset drawn once per
//! episode plus per-step sensor noise. The demonstrator sees the true state.
//! Action: `[vx, vy, grip]`; the gripper closes when `grip > 0`.

use serde::{Deserialize, Serialize};

use super::{clip_action, EnvSpec, EnvState, Environment, StepResult};
use crate::rng::SimRng;

const SENSOR_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspParams {
    pub horizon: usize,
    /// Distance moved per step at full velocity command.
    pub speed: f64,
    pub grab_radius: f64,
    pub bin_x: [f64; 2],
    pub bin_top: f64,
    /// Height the held item must exceed to earn reward.
    pub lift_threshold: f64,
    /// Resting height of the item on the bin floor.
    pub item_rest_y: f64,
    /// Horizontal range of item placements.
    pub item_x: [f64; 2],
    pub start_x: [f64; 2],
    pub start_y: [f64; 2],
    /// Standard deviation of the per-episode horizontal perception offset.
    pub obs_bias: f64,
    /// Standard deviation of the per-step noise on the observed item offset.
    pub obs_noise: f64,
    pub demo_noise: f64,
    pub demo_gain: f64,
    /// Demonstrator closes the gripper below this distance.
    pub demo_grip_distance: f64,
    pub demo_lift_y: f64,
    /// The floor stops downward motion; otherwise leaving through it faults.
    pub solid_floor: bool,
}

impl Default for GraspParams {
    fn default() -> Self {
        Self {
            horizon: 60,
            speed: 0.05,
            grab_radius: 0.05,
            bin_x: [0.3, 0.7],
            bin_top: 0.3,
            lift_threshold: 0.5,
            item_rest_y: 0.03,
            item_x: [0.35, 0.65],
            start_x: [0.1, 0.9],
            start_y: [0.6, 0.9],
            obs_bias: 0.05,
            obs_noise: 0.0,
            demo_noise: 0.05,
            demo_gain: 10.0,
            demo_grip_distance: 0.03,
            demo_lift_y: 0.75,
            solid_floor: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraspEnv {
    params: GraspParams,
    gripper: [f64; 2],
    item: [f64; 2],
    holding: bool,
    /// Set once the item has been placed for the first time.
    placed: bool,
    earned: bool,
    sensor: SimRng,
    bias: f64,
    state: EnvState,
}

impl GraspEnv {
    pub fn new(params: GraspParams) -> Self {
        let horizon = params.horizon;
        let mut env = Self {
            params,
            gripper: [0.5, 0.75],
            item: [0.5, 0.0],
            holding: false,
            placed: false,
            earned: false,
            sensor: SimRng::with_stream(0, SENSOR_STREAM),
            bias: 0.0,
            state: EnvState {
                observation: Vec::new(),
                t: 0,
                horizon,
            },
        };
        env.item[1] = env.params.item_rest_y;
        env.state.observation = env.observe();
        env
    }

    pub fn params(&self) -> &GraspParams {
        &self.params
    }

    pub fn gripper(&self) -> [f64; 2] {
        self.gripper
    }

    pub fn item(&self) -> [f64; 2] {
        self.item
    }

    pub fn holding(&self) -> bool {
        self.holding
    }

    fn observe(&mut self) -> Vec<f64> {
        let sigma = self.params.obs_noise;
        let mut noise = || {
            if sigma > 0.0 {
                sigma * self.sensor.normal()
            } else {
                0.0
            }
        };
        let (nx, ny) = (noise(), noise());
        vec![
            self.gripper[0],
            self.gripper[1],
            self.item[0] - self.gripper[0] + self.bias + nx,
            self.item[1] - self.gripper[1] + ny,
            if self.holding { 1.0 } else { 0.0 },
        ]
    }

    fn in_workspace(p: [f64; 2]) -> bool {
        (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])
    }

    fn drop_item(&mut self) {
        self.holding = false;
        let [lo, hi] = self.params.item_x;
        self.item = [self.item[0].clamp(lo, hi), self.params.item_rest_y];
    }
}

impl Environment for GraspEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "grasp".into(),
            obs_dim: 5,
            act_dim: 3,
            horizon: self.params.horizon,
        }
    }

    /// The item keeps its resting place after an unsuccessful episode and is
    /// re-drawn after a successful one.
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = SimRng::new(seed);
        let p = &self.params;
        self.gripper = [
            rng.uniform(p.start_x[0], p.start_x[1]),
            rng.uniform(p.start_y[0], p.start_y[1]),
        ];
        let item_x = rng.uniform(p.item_x[0], p.item_x[1]);
        if !self.placed || self.earned {
            self.item = [item_x, p.item_rest_y];
            self.placed = true;
        } else {
            self.drop_item();
        }
        self.holding = false;
        self.earned = false;
        self.state.t = 0;
        self.sensor = SimRng::with_stream(seed, SENSOR_STREAM);
        self.bias = self.params.obs_bias * self.sensor.normal();
        self.state.observation = self.observe();
        self.state.observation.clone()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let a = clip_action(action, 3);
        let speed = self.params.speed;
        self.gripper[0] += speed * a[0];
        self.gripper[1] += speed * a[1];
        if self.params.solid_floor {
            self.gripper[1] = self.gripper[1].max(0.0);
        }
        self.state.t += 1;
        let fault = !Self::in_workspace(self.gripper);

        if a[2] > 0.0 {
            if !self.holding {
                let dx = self.item[0] - self.gripper[0];
                let dy = self.item[1] - self.gripper[1];
                if (dx * dx + dy * dy).sqrt() < self.params.grab_radius {
                    self.holding = true;
                }
            }
        } else if self.holding {
            self.drop_item();
        }
        if self.holding {
            self.item = self.gripper;
        }

        let reward = if self.holding && self.item[1] > self.params.lift_threshold {
            1.0
        } else {
            0.0
        };
        if reward > 0.0 {
            self.earned = true;
        }
        if fault && self.holding {
            self.drop_item();
        }
        self.state.observation = self.observe();
        StepResult {
            observation: self.state.observation.clone(),
            reward,
            truncated: fault || self.state.t >= self.params.horizon,
            fault,
        }
    }

    fn state(&self) -> &EnvState {
        &self.state
    }

    /// Descend to the item with the gripper open, close it, lift.
    fn demonstrator_action(&self, rng: &mut SimRng) -> Vec<f64> {
        let p = &self.params;
        let k = p.demo_gain;
        let mut a = if self.holding {
            [0.0, k * (p.demo_lift_y - self.gripper[1]), 1.0]
        } else {
            let dx = self.item[0] - self.gripper[0];
            let dy = self.item[1] - self.gripper[1];
            let grip = if (dx * dx + dy * dy).sqrt() < p.demo_grip_distance {
                1.0
            } else {
                -1.0
            };
            [k * dx, k * dy, grip]
        };
        for v in a.iter_mut().take(2) {
            *v = (*v + p.demo_noise * rng.normal()).clamp(-1.0, 1.0);
        }
        a.to_vec()
    }
}
