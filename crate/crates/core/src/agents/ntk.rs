//! Empirical neural tangent kernel of a critic.

use ndarray::Array2;

use super::critic::{Critic, QFunction};
use crate::autodiff::{Graph, Mode, TapeGradients};
use crate::{Error, Result};

/// `grad_theta Q(s, a)` for a single pair, in eval mode.
pub fn param_gradient(critic: &Critic, s: &[f64], a: &[f64]) -> Result<TapeGradients> {
    let mut g = Graph::new();
    let sn = g.constant(
        Array2::from_shape_vec((1, s.len()), s.to_vec()).map_err(|e| Error::config(e.to_string()))?,
    );
    let an = g.constant(
        Array2::from_shape_vec((1, a.len()), a.to_vec()).map_err(|e| Error::config(e.to_string()))?,
    );
    let nodes = critic.forward_on(&mut g, sn, an, Mode::Eval)?;
    let adj = g.backward(nodes.q)?;
    critic.net.grads_from(&g, &adj)
}

/// `kappa = grad Q(s', a') . grad Q(s, a)` over every parameter.
pub fn ntk_kernel_estimate(
    critic: &Critic,
    first: (&[f64], &[f64]),
    second: (&[f64], &[f64]),
) -> Result<f64> {
    let g1 = param_gradient(critic, first.0, first.1)?;
    let g2 = param_gradient(critic, second.0, second.1)?;
    Ok(g1.dot(&g2))
}

/// The kernel restricted to last-layer weights.
pub fn last_layer_kernel(
    critic: &Critic,
    first: (&[f64], &[f64]),
    second: (&[f64], &[f64]),
) -> Result<f64> {
    let g1 = param_gradient(critic, first.0, first.1)?;
    let g2 = param_gradient(critic, second.0, second.1)?;
    let (a, b) = (g1.tensors.last(), g2.tensors.last());
    Ok(a.zip(b).map_or(0.0, |(a, b)| (a * b).sum()))
}
