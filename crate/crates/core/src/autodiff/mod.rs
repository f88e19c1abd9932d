//! Reverse-mode differentiation for small dense networks.

mod adam;
mod gradcheck;
mod graph;
mod mlp;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gradcheck::{gradient_check, gradient_check_vec, relative_error, FULL_CHECK_LIMIT};
pub use graph::{Adjoints, Graph, Mat, NodeId};
pub use mlp::{
    backward, forward, Activation, BatchStats, Layer, LayerSpec, MlpNodes, MlpParams, Mode, Norm,
    NormKind, Tape, TapeGradients, BATCH_NORM_MOMENTUM, NORM_EPS,
};
