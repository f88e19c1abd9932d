use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::agents::QFunction;
use crate::autodiff::{Graph, Mode};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldPoint {
    /// Grid coordinates `(i, j)` and the scanned action values.
    pub i: usize,
    pub j: usize,
    pub a: [f64; 2],
    pub q: f64,
    /// `dQ/da` along the two scanned dimensions.
    pub grad: [f64; 2],
}

/// Exact action gradients of Q on a square grid over two action dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientField {
    pub dims: [usize; 2],
    pub grid: usize,
    pub points: Vec<FieldPoint>,
}

/// Scans action dimensions `dims` over `grid x grid` points in `[-1, 1]^2`;
/// the other coordinates stay at `base_action`.
pub fn q_action_gradient_field(
    critic: &dyn QFunction,
    s: &[f64],
    base_action: &[f64],
    dims: [usize; 2],
    grid: usize,
) -> Result<GradientField> {
    let act_dim = base_action.len();
    if grid < 2 {
        return Err(Error::config("gradient field needs at least a 2x2 grid"));
    }
    if dims[0] == dims[1] || dims.iter().any(|&d| d >= act_dim) {
        return Err(Error::config(format!(
            "scan dimensions {dims:?} invalid for {act_dim} action dimensions"
        )));
    }
    let coord = |k: usize| -1.0 + 2.0 * k as f64 / (grid - 1) as f64;
    let rows = grid * grid;
    let obs = Array2::from_shape_fn((rows, s.len()), |(_, c)| s[c]);
    let act = Array2::from_shape_fn((rows, act_dim), |(r, c)| {
        if c == dims[0] {
            coord(r / grid)
        } else if c == dims[1] {
            coord(r % grid)
        } else {
            base_action[c]
        }
    });
    let mut g = Graph::new();
    let sn = g.constant(obs);
    let an = g.variable(act.clone());
    let nodes = critic.forward_on(&mut g, sn, an, Mode::Eval)?;
    let adj = g.backward_with(nodes.q, Array2::ones((rows, 1)))?;
    let q = g.value(nodes.q);
    let zero = Array2::zeros((rows, act_dim));
    let da = adj.get(an).unwrap_or(&zero);
    let points = (0..rows)
        .map(|r| FieldPoint {
            i: r / grid,
            j: r % grid,
            a: [act[(r, dims[0])], act[(r, dims[1])]],
            q: q[(r, 0)],
            grad: [da[(r, dims[0])], da[(r, dims[1])]],
        })
        .collect();
    Ok(GradientField { dims, grid, points })
}
