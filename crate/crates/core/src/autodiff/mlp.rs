//! Dense multilayer perceptrons on top of the tape.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use super::graph::{Adjoints, Binding, Graph, Mat, NodeId};
use crate::error::{Error, Result};
use crate::rng::SimRng;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    None,
    BatchNorm,
    LayerNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

pub const BATCH_NORM_MOMENTUM: f64 = 0.99;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Norm {
    None,
    BatchNorm {
        gamma: Array1<f64>,
        beta: Array1<f64>,
        running_mean: Array1<f64>,
        running_var: Array1<f64>,
    },
    LayerNorm {
        gamma: Array1<f64>,
        beta: Array1<f64>,
    },
}

impl Norm {
    fn new(kind: NormKind, width: usize) -> Self {
        match kind {
            NormKind::None => Norm::None,
            NormKind::BatchNorm => Norm::BatchNorm {
                gamma: Array1::ones(width),
                beta: Array1::zeros(width),
                running_mean: Array1::zeros(width),
                running_var: Array1::ones(width),
            },
            NormKind::LayerNorm => Norm::LayerNorm {
                gamma: Array1::ones(width),
                beta: Array1::zeros(width),
            },
        }
    }

    pub fn kind(&self) -> NormKind {
        match self {
            Norm::None => NormKind::None,
            Norm::BatchNorm { .. } => NormKind::BatchNorm,
            Norm::LayerNorm { .. } => NormKind::LayerNorm,
        }
    }
}

/// `activation(norm(x W^T + b))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
    pub activation: Activation,
    pub norm: Norm,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Layer description used to build a fresh network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    pub norm: NormKind,
    pub bias: bool,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self {
            width,
            activation,
            norm: NormKind::None,
            bias: true,
        }
    }

    pub fn norm(mut self, norm: NormKind) -> Self {
        self.norm = norm;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }
}

/// Parameters of a dense network. `version` increases on every change to
/// trainable values so that tapes recorded against older values are rejected.
#[derive(Debug, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    #[serde(skip, default = "fresh_id")]
    id: u64,
    #[serde(skip)]
    version: u64,
}

impl Clone for MlpParams {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Batch statistics observed by one train-mode pass, per batch-norm layer.
#[derive(Debug, Clone, Default)]
pub struct BatchStats {
    pub entries: Vec<(usize, Array1<f64>, Array1<f64>)>,
}

/// Nodes produced by placing a network on a tape.
#[derive(Debug, Clone)]
pub struct MlpNodes {
    pub output: NodeId,
    /// Input to the last layer (the representation layer).
    pub features: NodeId,
    pub batch_stats: BatchStats,
}

impl MlpParams {
    /// Uniform fan-in initialization: He-scaled for ReLU layers, Xavier-scaled otherwise.
    pub fn new(input: usize, specs: &[LayerSpec], rng: &mut SimRng) -> Result<Self> {
        if input == 0 || specs.is_empty() {
            return Err(Error::config("network needs a positive input width and at least one layer"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut fan_in = input;
        for spec in specs {
            if spec.width == 0 {
                return Err(Error::config("layer width must be positive"));
            }
            let bound = match spec.activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + spec.width) as f64).sqrt(),
            };
            let weight = Array2::from_shape_fn((spec.width, fan_in), |_| rng.uniform(-bound, bound));
            let bias = spec.bias.then(|| Array1::zeros(spec.width));
            layers.push(Layer {
                weight,
                bias,
                activation: spec.activation,
                norm: Norm::new(spec.norm, spec.width),
            });
            fan_in = spec.width;
        }
        Ok(Self::from_layers(layers)?)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let params = Self {
            layers,
            id: fresh_id(),
            version: 0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::config(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            let w = l.out_dim();
            let ok = l.bias.as_ref().map_or(true, |b| b.len() == w)
                && match &l.norm {
                    Norm::None => true,
                    Norm::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    } => [gamma, beta, running_mean, running_var].iter().all(|v| v.len() == w),
                    Norm::LayerNorm { gamma, beta } => gamma.len() == w && beta.len() == w,
                };
            if !ok {
                return Err(Error::config(format!("layer {i}: vector length mismatch")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Layer::out_dim).unwrap_or(0)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Records that trainable values changed.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    /// Trainable tensors in canonical order: per layer weight, bias, gamma, beta.
    /// Vectors appear as `[1 x n]` views.
    pub fn tensors(&self) -> Vec<ArrayView2<'_, f64>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.view());
            if let Some(b) = &l.bias {
                out.push(b.view().insert_axis(Axis(0)));
            }
            match &l.norm {
                Norm::None => {}
                Norm::BatchNorm { gamma, beta, .. } | Norm::LayerNorm { gamma, beta } => {
                    out.push(gamma.view().insert_axis(Axis(0)));
                    out.push(beta.view().insert_axis(Axis(0)));
                }
            }
        }
        out
    }

    /// Mutable trainable tensors; bumps the version.
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMut2<'_, f64>> {
        self.version += 1;
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.view_mut());
            if let Some(b) = &mut l.bias {
                out.push(b.view_mut().insert_axis(Axis(0)));
            }
            match &mut l.norm {
                Norm::None => {}
                Norm::BatchNorm { gamma, beta, .. } | Norm::LayerNorm { gamma, beta } => {
                    out.push(gamma.view_mut().insert_axis(Axis(0)));
                    out.push(beta.view_mut().insert_axis(Axis(0)));
                }
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied().collect::<Vec<_>>()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::config(format!(
                "flat parameter vector has {} entries, network has {}",
                values.len(),
                self.num_params()
            )));
        }
        let mut it = values.iter();
        for mut t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Zero gradients shaped like this network.
    pub fn zero_grads(&self) -> TapeGradients {
        TapeGradients {
            tensors: self.tensors().iter().map(|t| Array2::zeros(t.dim())).collect(),
        }
    }

    /// Places the trainable tensors on `g` once; later calls reuse the same nodes.
    pub fn bind(&self, g: &mut Graph) -> usize {
        if let Some(slot) = g.find_binding(self.id) {
            return slot;
        }
        let slot = g.bindings.len();
        let nodes = self
            .tensors()
            .iter()
            .map(|t| g.param(t.to_owned()))
            .collect();
        g.bindings.push(Binding {
            id: self.id,
            version: self.version,
            nodes,
        });
        slot
    }

    /// Forward pass recorded on `g`.
    pub fn forward_on(&self, g: &mut Graph, input: NodeId, mode: Mode) -> Result<MlpNodes> {
        let width = g.value(input).ncols();
        if width != self.input_dim() {
            return Err(Error::config(format!(
                "input width {width} does not match network input {}",
                self.input_dim()
            )));
        }
        let slot = self.bind(g);
        let nodes = g.bindings[slot].nodes.clone();
        if g.bindings[slot].version != self.version {
            return Err(Error::StaleTape {
                recorded: g.bindings[slot].version,
                current: self.version,
            });
        }
        let mut cursor = 0usize;
        let mut next = || {
            let n = nodes[cursor];
            cursor += 1;
            n
        };
        let mut h = input;
        let mut features = input;
        let mut stats = BatchStats::default();
        for (li, layer) in self.layers.iter().enumerate() {
            features = h;
            let w = next();
            let b = layer.bias.as_ref().map(|_| next());
            let mut z = g.linear(h, w, b)?;
            match &layer.norm {
                Norm::None => {}
                Norm::LayerNorm { .. } => {
                    let (gamma, beta) = (next(), next());
                    z = g.layer_norm(z, gamma, beta, NORM_EPS)?;
                }
                Norm::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => {
                    let (gamma, beta) = (next(), next());
                    z = match mode {
                        Mode::Train => {
                            let (out, mean, var) = g.batch_norm(z, gamma, beta, NORM_EPS)?;
                            stats.entries.push((li, mean, var));
                            out
                        }
                        Mode::Eval => {
                            g.batch_norm_fixed(z, gamma, beta, running_mean, running_var, NORM_EPS)?
                        }
                    };
                }
            }
            h = match layer.activation {
                Activation::Tanh => g.tanh(z),
                Activation::Relu => g.relu(z),
                Activation::Identity => z,
            };
        }
        Ok(MlpNodes {
            output: h,
            features,
            batch_stats: stats,
        })
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        for (li, mean, var) in &stats.entries {
            if let Some(Norm::BatchNorm {
                running_mean,
                running_var,
                ..
            }) = self.layers.get_mut(*li).map(|l| &mut l.norm)
            {
                running_mean.zip_mut_with(mean, |r, &m| {
                    *r = BATCH_NORM_MOMENTUM * *r + (1.0 - BATCH_NORM_MOMENTUM) * m
                });
                running_var.zip_mut_with(var, |r, &v| {
                    *r = BATCH_NORM_MOMENTUM * *r + (1.0 - BATCH_NORM_MOMENTUM) * v
                });
            }
        }
    }

    /// Convenience forward without keeping the tape.
    pub fn predict(&self, input: &Mat, mode: Mode) -> Result<Mat> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let out = self.forward_on(&mut g, x, mode)?;
        Ok(g.value(out.output).clone())
    }

    /// Gradients of this network's tensors out of a finished backward pass.
    pub fn grads_from(&self, g: &Graph, adj: &Adjoints) -> Result<TapeGradients> {
        let Some(slot) = g.find_binding(self.id) else {
            return Ok(self.zero_grads());
        };
        let binding = &g.bindings[slot];
        if binding.version != self.version {
            return Err(Error::StaleTape {
                recorded: binding.version,
                current: self.version,
            });
        }
        let tensors = binding
            .nodes
            .iter()
            .zip(self.tensors())
            .map(|(n, t)| adj.get(*n).cloned().unwrap_or_else(|| Array2::zeros(t.dim())))
            .collect();
        Ok(TapeGradients { tensors })
    }
}

/// Gradients shaped like the trainable tensors of an [`MlpParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapeGradients {
    pub tensors: Vec<Array2<f64>>,
}

impl TapeGradients {
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.iter().copied().collect::<Vec<_>>()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn dot(&self, other: &TapeGradients) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| (a * b).sum())
            .sum()
    }

    pub fn add_assign(&mut self, other: &TapeGradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * k);
        }
    }

    pub fn congruent_with(&self, params: &MlpParams) -> bool {
        let shapes = params.tensors();
        shapes.len() == self.tensors.len()
            && shapes.iter().zip(&self.tensors).all(|(p, g)| p.dim() == g.dim())
    }
}

/// A recorded forward pass of one network.
#[derive(Debug, Clone)]
pub struct Tape {
    graph: Graph,
    nodes: MlpNodes,
    param_id: u64,
    version: u64,
}

impl Tape {
    pub fn output(&self) -> &Mat {
        self.graph.value(self.nodes.output)
    }

    pub fn features(&self) -> &Mat {
        self.graph.value(self.nodes.features)
    }

    pub fn batch_stats(&self) -> &BatchStats {
        &self.nodes.batch_stats
    }
}

/// Runs `params` on `input` and keeps the tape for [`backward`].
pub fn forward(params: &MlpParams, input: &Mat, mode: Mode) -> Result<(Mat, Tape)> {
    let mut graph = Graph::new();
    let x = graph.constant(input.clone());
    let nodes = params.forward_on(&mut graph, x, mode)?;
    let out = graph.value(nodes.output).clone();
    Ok((
        out,
        Tape {
            graph,
            nodes,
            param_id: params.id,
            version: params.version,
        },
    ))
}

/// Gradient of `sum(upstream * output)` with respect to every trainable tensor.
pub fn backward(tape: &Tape, params: &MlpParams, upstream: &Mat) -> Result<TapeGradients> {
    if tape.param_id != params.id {
        return Err(Error::config("tape was recorded with a different network"));
    }
    if tape.version != params.version {
        return Err(Error::StaleTape {
            recorded: tape.version,
            current: params.version,
        });
    }
    let adj = tape.graph.backward_with(tape.nodes.output, upstream.clone())?;
    params.grads_from(&tape.graph, &adj)
}
