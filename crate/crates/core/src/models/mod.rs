//! GCN, GraphSage and GAT encoders.
//!
//! A model is a stack of message-passing layers (two by default). For the
//! node task the last layer emits class logits; for the graph task every
//! layer emits hidden embeddings, which are sum-pooled per graph and fed to
//! a linear head.

mod checkpoint;
pub mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use layers::{
    batch_norm, gat_layer, gcn_layer, sage_layer, AttentionEdges, BnRunning, GatHead, HeadCombine,
};

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BgnnError, Result};
use crate::graph::{mean_neighbor_matrix, normalize_adjacency, sample_neighbors_with, Fanout, Graph, GraphBatch};
use crate::seeding::{self, Stream};
use crate::tensor::{Gradients, SparseMatrix, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Gcn,
    Sage,
    Gat,
}

impl std::str::FromStr for Architecture {
    type Err = BgnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Self::Gcn),
            "sage" | "graphsage" => Ok(Self::Sage),
            "gat" => Ok(Self::Gat),
            _ => Err(BgnnError::Config(format!("unknown architecture `{s}` (gcn, sage, gat)"))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gcn => "gcn",
            Self::Sage => "sage",
            Self::Gat => "gat",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Node,
    Graph,
}

fn default_dropout() -> f64 {
    0.5
}
fn default_heads() -> usize {
    8
}
fn default_one() -> usize {
    1
}
fn default_layers() -> usize {
    2
}
fn default_fanout() -> Fanout {
    Fanout::All
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub in_dim: usize,
    /// Hidden width for GCN/GraphSage; GAT uses `heads × head_dim`.
    pub hidden_dim: usize,
    pub n_classes: usize,
    /// Defaults to ReLU for GCN/GraphSage and ELU for GAT.
    #[serde(default)]
    pub activation: Option<Activation>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_heads")]
    pub head_dim: usize,
    /// Heads of the last (averaging) GAT layer.
    #[serde(default = "default_one")]
    pub out_heads: usize,
    #[serde(default = "default_fanout")]
    pub fanout: Fanout,
    #[serde(default)]
    pub batch_norm: bool,
    /// Two in the training pipeline; deeper stacks exist for the CKA study.
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default)]
    pub task: Task,
}

impl ModelConfig {
    /// Defaults used throughout: hidden 16 (GCN/GraphSage), 8 heads of 8
    /// (GAT), dropout 0.5, two layers, full neighborhoods.
    pub fn new(arch: Architecture, in_dim: usize, n_classes: usize) -> Self {
        Self {
            arch,
            in_dim,
            hidden_dim: 16,
            n_classes,
            activation: None,
            dropout: default_dropout(),
            heads: 8,
            head_dim: 8,
            out_heads: 1,
            fanout: Fanout::All,
            batch_norm: false,
            n_layers: 2,
            task: Task::Node,
        }
    }

    pub fn activation(&self) -> Activation {
        self.activation.unwrap_or(match self.arch {
            Architecture::Gat => Activation::Elu,
            _ => Activation::Relu,
        })
    }

    /// Width of the hidden representations.
    pub fn hidden_width(&self) -> usize {
        match self.arch {
            Architecture::Gat => self.heads * self.head_dim,
            _ => self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BgnnError::Config(m.to_string()));
        if self.in_dim == 0 || self.n_classes == 0 || self.n_layers == 0 {
            return bad("in_dim, n_classes and n_layers must be positive");
        }
        if self.hidden_width() == 0 {
            return bad("hidden width must be positive");
        }
        if self.arch == Architecture::Gat && self.out_heads == 0 {
            return bad("out_heads must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(&format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Parameter slots of one message-passing layer.
#[derive(Clone, Debug, PartialEq)]
struct LayerSlots {
    /// GCN/GraphSage weight, or one `(W, a_center, a_neighbor)` per GAT head.
    weights: Vec<usize>,
    heads: Vec<[usize; 3]>,
    bias: usize,
    /// `(scale, shift)` of the batch norm after this layer, with the index
    /// of its running statistics.
    bn: Option<(usize, usize, usize)>,
}

/// Precomputed structure of a graph or batch, shared across epochs.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub n_nodes: usize,
    pub features: Arc<Tensor>,
    pub adj_norm: Arc<SparseMatrix>,
    pub neighbors: Arc<Vec<Vec<usize>>>,
    pub mean_all: Arc<SparseMatrix>,
    pub attention: AttentionEdges,
    /// Graph assignment for the graph task.
    pub pool: Option<(Arc<[usize]>, usize)>,
}

impl GraphInput {
    pub fn from_graph(g: &Graph) -> Self {
        let neighbors = g.neighbors();
        Self {
            n_nodes: g.n_nodes(),
            features: Arc::new(g.features().clone()),
            adj_norm: Arc::new(normalize_adjacency(g)),
            mean_all: Arc::new(mean_neighbor_matrix(&neighbors)),
            neighbors: Arc::new(neighbors),
            attention: AttentionEdges::new(g.n_nodes(), g.edges()),
            pool: None,
        }
    }

    pub fn from_batch(b: &GraphBatch) -> Self {
        let mut input = Self::from_graph(&b.graph);
        input.pool = Some((b.graph_ids.as_slice().into(), b.n_graphs));
        input
    }
}

/// Random streams used by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct TrainRngs {
    pub dropout: ChaCha8Rng,
    pub sampling: ChaCha8Rng,
}

impl TrainRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            dropout: seeding::rng(seed, Stream::Dropout),
            sampling: seeding::rng(seed, Stream::Sampling),
        }
    }
}

/// Handles into the tape produced by [`GnnModel::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    /// Post-activation, pre-dropout output of each layer (for the node
    /// task the last entry is the logits).
    pub layers: Vec<Var>,
    /// One tape variable per model parameter, in declaration order.
    pub params: Vec<Var>,
    /// Batch statistics gathered by training-mode batch norm.
    pub bn_batch: Vec<Option<BnRunning>>,
    /// Attention coefficients per GAT layer and head.
    pub attention: Vec<Vec<Var>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    config: ModelConfig,
    seed: u64,
    params: Vec<Tensor>,
    names: Vec<String>,
    layers: Vec<LayerSlots>,
    head: Option<(usize, usize)>,
    bn: Vec<BnRunning>,
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, data).with_requires_grad(true)
}

impl GnnModel {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeding::rng(seed, Stream::Init);
        let mut params = Vec::new();
        let mut names = Vec::new();
        let mut push = |params: &mut Vec<Tensor>, name: String, t: Tensor| {
            params.push(t);
            names.push(name);
            params.len() - 1
        };
        let hidden = config.hidden_width();
        let mut layers = Vec::with_capacity(config.n_layers);
        let mut bn = Vec::new();
        for l in 0..config.n_layers {
            let last = l + 1 == config.n_layers;
            let d_in = if l == 0 { config.in_dim } else { hidden };
            let d_out = if last && config.task == Task::Node {
                config.n_classes
            } else {
                hidden
            };
            let mut slots = LayerSlots {
                weights: Vec::new(),
                heads: Vec::new(),
                bias: 0,
                bn: None,
            };
            match config.arch {
                Architecture::Gcn => {
                    let w = glorot(&mut rng, d_in, d_out, d_in, d_out);
                    slots.weights.push(push(&mut params, format!("layer{l}.weight"), w));
                }
                Architecture::Sage => {
                    let w = glorot(&mut rng, 2 * d_in, d_out, 2 * d_in, d_out);
                    slots.weights.push(push(&mut params, format!("layer{l}.weight"), w));
                }
                Architecture::Gat => {
                    let (n_heads, width) = if last {
                        (config.out_heads, d_out)
                    } else {
                        (config.heads, config.head_dim)
                    };
                    for k in 0..n_heads {
                        let w = glorot(&mut rng, d_in, width, d_in, width);
                        let wi = push(&mut params, format!("layer{l}.head{k}.weight"), w);
                        // the two halves of one (2·width)×1 attention vector
                        let ac = glorot(&mut rng, 2 * width, 1, width, 1);
                        let an = glorot(&mut rng, 2 * width, 1, width, 1);
                        let aci = push(&mut params, format!("layer{l}.head{k}.att_center"), ac);
                        let ani = push(&mut params, format!("layer{l}.head{k}.att_neighbor"), an);
                        slots.heads.push([wi, aci, ani]);
                    }
                }
            }
            let b = Tensor::zeros(1, d_out).with_requires_grad(true);
            slots.bias = push(&mut params, format!("layer{l}.bias"), b);
            if config.batch_norm && !last {
                let s = push(&mut params, format!("layer{l}.bn.scale"), Tensor::filled(1, d_out, 1.0).with_requires_grad(true));
                let t = push(&mut params, format!("layer{l}.bn.shift"), Tensor::zeros(1, d_out).with_requires_grad(true));
                slots.bn = Some((s, t, bn.len()));
                bn.push(BnRunning::new(d_out));
            }
            layers.push(slots);
        }
        let head = if config.task == Task::Graph {
            let w = glorot(&mut rng, hidden, config.n_classes, hidden, config.n_classes);
            let wi = push(&mut params, "head.weight".into(), w);
            let bi = push(
                &mut params,
                "head.bias".into(),
                Tensor::zeros(1, config.n_classes).with_requires_grad(true),
            );
            Some((wi, bi))
        } else {
            None
        };
        Ok(Self {
            config,
            seed,
            params,
            names,
            layers,
            head,
            bn,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn bn_running(&self) -> &[BnRunning] {
        &self.bn
    }

    pub(crate) fn bn_running_mut(&mut self) -> &mut [BnRunning] {
        &mut self.bn
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records a forward pass. `rngs = None` selects eval mode: no dropout,
    /// full neighborhoods, running batch-norm statistics.
    pub fn forward(&self, tape: &mut Tape, input: &GraphInput, rngs: Option<&mut TrainRngs>) -> Result<Forward> {
        let params: Vec<Var> = self.params.iter().map(|p| tape.param(p)).collect();
        self.forward_with(tape, params, input, rngs)
    }

    /// Like [`GnnModel::forward`], with parameters already on the tape (one
    /// variable per parameter, in declaration order).
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: Vec<Var>,
        input: &GraphInput,
        mut rngs: Option<&mut TrainRngs>,
    ) -> Result<Forward> {
        let cfg = &self.config;
        if params.len() != self.params.len() {
            return Err(BgnnError::shape(
                "model_forward",
                format!("{} parameter variables for {} parameters", params.len(), self.params.len()),
            ));
        }
        if input.features.cols() != cfg.in_dim {
            return Err(BgnnError::shape(
                "model_forward",
                format!("features have {} columns, model expects {}", input.features.cols(), cfg.in_dim),
            ));
        }
        if cfg.task == Task::Graph && input.pool.is_none() {
            return Err(BgnnError::contract("graph-task model needs a batched input"));
        }
        let training = rngs.is_some();
        let mut h = tape.shared(input.features.clone());
        let mut reps = Vec::with_capacity(self.layers.len());
        let mut bn_batch = vec![None; self.bn.len()];
        let mut attention = Vec::new();
        let n_layers = self.layers.len();
        for (l, slots) in self.layers.iter().enumerate() {
            let last = l + 1 == n_layers;
            let b = params[slots.bias];
            h = match cfg.arch {
                Architecture::Gcn => gcn_layer(tape, h, &input.adj_norm, params[slots.weights[0]], b)?,
                Architecture::Sage => {
                    let mean = match (&mut rngs, cfg.fanout) {
                        (Some(r), Fanout::Max(_)) => Arc::new(mean_neighbor_matrix(&sample_neighbors_with(
                            &input.neighbors,
                            cfg.fanout,
                            &mut r.sampling,
                        ))),
                        _ => input.mean_all.clone(),
                    };
                    sage_layer(tape, h, &mean, params[slots.weights[0]], b)?
                }
                Architecture::Gat => {
                    let heads: Vec<GatHead> = slots
                        .heads
                        .iter()
                        .map(|&[w, ac, an]| GatHead {
                            w: params[w],
                            a_center: params[ac],
                            a_neighbor: params[an],
                        })
                        .collect();
                    let combine = if last {
                        HeadCombine::Average
                    } else {
                        HeadCombine::Concat
                    };
                    let (out, alphas) = gat_layer(tape, h, &input.attention, &heads, combine)?;
                    attention.push(alphas);
                    tape.add_row(out, b)?
                }
            };
            if last && cfg.task == Task::Node {
                reps.push(h);
                break;
            }
            h = match cfg.activation() {
                Activation::Relu => tape.relu(h),
                Activation::Elu => tape.elu(h, 1.0),
            };
            reps.push(h);
            if !last {
                if let Some(r) = &mut rngs {
                    h = tape.dropout(h, cfg.dropout, true, &mut r.dropout)?;
                }
                if let Some((s, t, k)) = slots.bn {
                    let (y, stats) = batch_norm(tape, h, params[s], params[t], &self.bn[k], training)?;
                    h = y;
                    bn_batch[k] = stats;
                }
            }
        }
        let logits = match (self.head, &input.pool) {
            (Some((w, b)), Some((ids, n_graphs))) => {
                let pooled = tape.segment_sum(h, ids, *n_graphs)?;
                let z = tape.matmul(pooled, params[w])?;
                tape.add_row(z, params[b])?
            }
            _ => h,
        };
        Ok(Forward {
            logits,
            layers: reps,
            params,
            bn_batch,
            attention,
        })
    }

    /// Eval-mode logits.
    pub fn predict(&self, input: &GraphInput) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, input, None)?;
        Ok(tape.value(f.logits).clone())
    }

    /// Eval-mode per-layer representations.
    pub fn representations(&self, input: &GraphInput) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, input, None)?;
        Ok(f.layers.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// Copies gradients from a backward pass into the parameter slots,
    /// replacing whatever was there.
    pub fn load_gradients(&mut self, grads: &Gradients, forward: &Forward) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&forward.params) {
            p.zero_grad();
            let g = grads.get_or_zeros(v, p.len());
            p.accumulate_grad(&g)?;
        }
        Ok(())
    }

    /// Folds training-mode batch statistics into the running statistics.
    pub fn apply_bn_stats(&mut self, stats: &[Option<BnRunning>]) {
        for (r, s) in self.bn.iter_mut().zip(stats) {
            if let Some(s) = s {
                r.update(s);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }
}
