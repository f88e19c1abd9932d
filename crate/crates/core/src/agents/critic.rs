use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    Activation, BatchStats, Graph, LayerSpec, Mat, MlpParams, Mode, NodeId, Norm, NormKind,
};
use crate::rng::SimRng;
use crate::Result;

/// Nodes of a critic evaluation: `q` is `[B x 1]`, `phi` is `[B x F]`.
#[derive(Debug, Clone)]
pub struct CriticNodes {
    pub q: NodeId,
    pub phi: NodeId,
    pub stats: BatchStats,
}

/// A state-action value function that can be placed on a tape.
pub trait QFunction {
    fn forward_on(&self, g: &mut Graph, obs: NodeId, act: NodeId, mode: Mode)
        -> Result<CriticNodes>;
}

/// Q-values together with the representation they are linear in.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticOutput {
    pub q: Vec<f64>,
    pub phi: Mat,
}

/// ReLU network on `[s | a]` whose last layer is linear without bias, so
/// `q = w . phi` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub net: MlpParams,
}

impl Critic {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        norm: NormKind,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let mut specs: Vec<LayerSpec> = hidden
            .iter()
            .map(|&w| {
                let spec = LayerSpec::new(w, Activation::Relu).norm(norm);
                // batch norm absorbs any shift applied before it
                if norm == NormKind::BatchNorm {
                    spec.without_bias()
                } else {
                    spec
                }
            })
            .collect();
        specs.push(LayerSpec::new(1, Activation::Identity).without_bias());
        Ok(Self {
            net: MlpParams::new(obs_dim + act_dim, &specs, rng)?,
        })
    }

    pub fn norm_kind(&self) -> NormKind {
        self.net.layers[0].norm.kind()
    }

    pub fn uses_batch_norm(&self) -> bool {
        self.net
            .layers
            .iter()
            .any(|l| matches!(l.norm, Norm::BatchNorm { .. }))
    }

    /// Weights of the last layer, the `w` in `q = w . phi`.
    pub fn head(&self) -> Array1<f64> {
        self.net.layers.last().expect("validated").weight.row(0).to_owned()
    }

    pub fn feature_dim(&self) -> usize {
        self.net.layers.last().expect("validated").in_dim()
    }

    /// Values only.
    pub fn evaluate(&self, obs: &Mat, act: &Mat, mode: Mode) -> Result<CriticOutput> {
        let mut g = Graph::new();
        let s = g.constant(obs.clone());
        let a = g.constant(act.clone());
        let nodes = self.forward_on(&mut g, s, a, mode)?;
        Ok(CriticOutput {
            q: g.value(nodes.q).index_axis(Axis(1), 0).to_vec(),
            phi: g.value(nodes.phi).clone(),
        })
    }

    pub fn q_values(&self, obs: &Mat, act: &Mat, mode: Mode) -> Result<Vec<f64>> {
        Ok(self.evaluate(obs, act, mode)?.q)
    }
}

impl QFunction for Critic {
    fn forward_on(
        &self,
        g: &mut Graph,
        obs: NodeId,
        act: NodeId,
        mode: Mode,
    ) -> Result<CriticNodes> {
        let x = g.concat(obs, act)?;
        let nodes = self.net.forward_on(g, x, mode)?;
        Ok(CriticNodes {
            q: nodes.output,
            phi: nodes.features,
            stats: nodes.batch_stats,
        })
    }
}

/// Spec-level evaluation of a critic on a batch.
pub fn critic_forward(critic: &Critic, obs: &Mat, act: &Mat, mode: Mode) -> Result<CriticOutput> {
    critic.evaluate(obs, act, mode)
}

/// `target <- polyak * target + (1 - polyak) * critic`, including any
/// running normalization statistics.
pub fn target_sync(critic: &Critic, target: &mut Critic, polyak: f64) {
    let mix = |t: &mut f64, s: f64| {
        if polyak == 0.0 {
            *t = s;
        } else {
            *t += (1.0 - polyak) * (s - *t);
        }
    };
    let src: Vec<Mat> = critic.net.tensors().iter().map(|t| t.to_owned()).collect();
    for (mut t, s) in target.net.tensors_mut().into_iter().zip(&src) {
        t.zip_mut_with(s, |t, &s| mix(t, s));
    }
    for (tl, cl) in target.net.layers.iter_mut().zip(&critic.net.layers) {
        if let (
            Norm::BatchNorm {
                running_mean: tm,
                running_var: tv,
                ..
            },
            Norm::BatchNorm {
                running_mean: cm,
                running_var: cv,
                ..
            },
        ) = (&mut tl.norm, &cl.norm)
        {
            tm.zip_mut_with(cm, |t, &s| mix(t, s));
            tv.zip_mut_with(cv, |t, &s| mix(t, s));
        }
    }
}
