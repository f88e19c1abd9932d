use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpParams, TapeGradients};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        let zeros = params.zero_grads().tensors;
        Self::with_shapes(zeros, lr)
    }

    pub fn with_shapes(zeros: Vec<Array2<f64>>, lr: f64) -> Self {
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// One bias-corrected Adam update applied to `tensors` in place.
    pub fn update<'a, I>(&mut self, tensors: I, grads: &[Array2<f64>]) -> Result<()>
    where
        I: IntoIterator<Item = ndarray::ArrayViewMut2<'a, f64>>,
    {
        if grads.len() != self.m.len() {
            return Err(Error::config("adam: gradient count does not match state"));
        }
        if let Some(bad) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::OptimizerFault(format!(
                "non-finite gradient in tensor {bad}"
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (((mut p, g), m), v) in tensors
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            if p.dim() != g.dim() || m.dim() != g.dim() {
                return Err(Error::config("adam: tensor shape mismatch"));
            }
            ndarray::Zip::from(&mut p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Adam step on a network.
pub fn adam_step(params: &mut MlpParams, grads: &TapeGradients, state: &mut AdamState) -> Result<()> {
    if !grads.congruent_with(params) {
        return Err(Error::config("adam: gradients are not shaped like the parameters"));
    }
    state.update(params.tensors_mut(), &grads.tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::mlp::{Activation, LayerSpec};
    use crate::rng::SimRng;

    #[test]
    fn non_finite_gradient_is_a_fault() {
        let mut rng = SimRng::new(0);
        let mut p = MlpParams::new(2, &[LayerSpec::new(1, Activation::Identity)], &mut rng).unwrap();
        let mut st = AdamState::new(&p, 1e-3);
        let mut g = p.zero_grads();
        g.tensors[0][[0, 0]] = f64::NAN;
        let before = p.flat();
        assert!(matches!(adam_step(&mut p, &g, &mut st), Err(Error::OptimizerFault(_))));
        assert_eq!(p.flat(), before);
        assert_eq!(st.step, 0);
    }
}
