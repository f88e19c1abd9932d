//! Independent straight-line re-evaluations used as test oracles.
#![allow(dead_code)]

pub mod losses;

use simplified_q::autodiff::{Activation, MlpParams, Norm};
use simplified_q::envs::{TrajMeta, Trajectory};

/// Plain nested-loop evaluation of one sample through a network without
/// normalization layers (or with layer norm). Returns (output, penultimate input).
pub fn mlp_eval(params: &MlpParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut h = x.to_vec();
    let mut features = h.clone();
    for layer in &params.layers {
        features = h.clone();
        let (out, inp) = layer.weight.dim();
        let mut z = vec![0.0; out];
        for o in 0..out {
            let mut acc = 0.0;
            for i in 0..inp {
                acc += layer.weight[[o, i]] * h[i];
            }
            if let Some(b) = &layer.bias {
                acc += b[o];
            }
            z[o] = acc;
        }
        match &layer.norm {
            Norm::None => {}
            Norm::LayerNorm { gamma, beta } => {
                let n = z.len() as f64;
                let mean = z.iter().sum::<f64>() / n;
                let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let inv = 1.0 / (var + 1e-5).sqrt();
                for o in 0..out {
                    z[o] = (z[o] - mean) * inv * gamma[o] + beta[o];
                }
            }
            Norm::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                for o in 0..out {
                    z[o] = (z[o] - running_mean[o]) / (running_var[o] + 1e-5).sqrt() * gamma[o]
                        + beta[o];
                }
            }
        }
        h = z
            .into_iter()
            .map(|v| match layer.activation {
                Activation::Tanh => v.tanh(),
                Activation::Relu => v.max(0.0),
                Activation::Identity => v,
            })
            .collect();
    }
    (h, features)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Observation `t` is `[t, -t]`, action `t` is `[0.01 t]`.
pub fn ramp_trajectory(rewards: &[f64], fault: bool) -> Trajectory {
    let len = rewards.len();
    Trajectory {
        observations: (0..=len).map(|t| vec![t as f64, -(t as f64)]).collect(),
        actions: (0..len).map(|t| vec![t as f64 * 0.01]).collect(),
        rewards: rewards.to_vec(),
        fault,
        meta: TrajMeta {
            env: "test".into(),
            seed: 0,
            demonstrator: "none".into(),
            horizon: len,
        },
    }
}

/// Brute-force double loop with powers recomputed from scratch.
pub fn nstep_oracle(rewards: &[f64], n: usize, gamma: f64) -> Vec<(f64, usize)> {
    let len = rewards.len();
    let mut out = Vec::new();
    for t in 0..len {
        let used = if t + n <= len { n } else { len - t };
        let mut sum = 0.0;
        for k in 0..used {
            sum += gamma.powi(k as i32) * rewards[t + k];
        }
        out.push((sum, used));
    }
    out
}
