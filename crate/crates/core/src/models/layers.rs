//! Message-passing layers as tape functions.

use std::sync::Arc;

use crate::error::{BgnnError, Result};
use crate::tensor::{SparseMatrix, Tape, Tensor, Var};

/// Negative slope of the LeakyReLU applied to attention logits.
pub const GAT_LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `Ã · h · W + b`.
pub fn gcn_layer(tape: &mut Tape, h: Var, adj: &Arc<SparseMatrix>, w: Var, b: Var) -> Result<Var> {
    // Multiply by W first when it shrinks the width: the sparse product is
    // then applied to the narrower matrix.
    let (din, dout) = (tape.value(w).rows(), tape.value(w).cols());
    let agg = if dout <= din {
        let hw = tape.matmul(h, w)?;
        tape.spmm(adj, hw)?
    } else {
        let ah = tape.spmm(adj, h)?;
        tape.matmul(ah, w)?
    };
    tape.add_row(agg, b)
}

/// `[h_v ∥ mean_{u ∈ S(v)} h_u] · W + b`; `mean` is a row-stochastic
/// matrix over the sampled neighbors (empty rows give a zero mean).
pub fn sage_layer(tape: &mut Tape, h: Var, mean: &Arc<SparseMatrix>, w: Var, b: Var) -> Result<Var> {
    let nbr = tape.spmm(mean, h)?;
    let cat = tape.concat_cols(h, nbr)?;
    let lin = tape.matmul(cat, w)?;
    tape.add_row(lin, b)
}

/// Parameters of one attention head.
#[derive(Clone, Copy, Debug)]
pub struct GatHead {
    pub w: Var,
    /// Applied to the receiving node `i`.
    pub a_center: Var,
    /// Applied to the neighbor `j`.
    pub a_neighbor: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadCombine {
    Concat,
    Average,
}

/// Attention edge list: `(center, neighbor)` for every stored edge plus a
/// self-loop per node, grouped by center.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionEdges {
    pub n_nodes: usize,
    pub center: Arc<[usize]>,
    pub neighbor: Arc<[usize]>,
}

impl AttentionEdges {
    pub fn new(n_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut pairs: Vec<(usize, usize)> = edges.iter().copied().filter(|(u, v)| u != v).collect();
        pairs.extend((0..n_nodes).map(|i| (i, i)));
        pairs.sort_unstable();
        pairs.dedup();
        Self {
            n_nodes,
            center: pairs.iter().map(|p| p.0).collect(),
            neighbor: pairs.iter().map(|p| p.1).collect(),
        }
    }
}

/// Multi-head graph attention. Returns the combined output and, per head,
/// the `E×1` attention coefficients aligned with `edges`.
pub fn gat_layer(
    tape: &mut Tape,
    h: Var,
    edges: &AttentionEdges,
    heads: &[GatHead],
    combine: HeadCombine,
) -> Result<(Var, Vec<Var>)> {
    if heads.is_empty() {
        return Err(BgnnError::Config("GAT layer needs at least one head".into()));
    }
    let n = edges.n_nodes;
    let mut outs = Vec::with_capacity(heads.len());
    let mut alphas = Vec::with_capacity(heads.len());
    for head in heads {
        let wh = tape.matmul(h, head.w)?;
        let s_center = tape.matmul(wh, head.a_center)?;
        let s_neighbor = tape.matmul(wh, head.a_neighbor)?;
        let ec = tape.gather_rows(s_center, &edges.center)?;
        let en = tape.gather_rows(s_neighbor, &edges.neighbor)?;
        let e = tape.add(ec, en)?;
        let e = tape.leaky_relu(e, GAT_LEAKY_SLOPE);
        let alpha = tape.segment_softmax(e, &edges.center, n)?;
        let msg = tape.gather_rows(wh, &edges.neighbor)?;
        let msg = tape.mul_col(msg, alpha)?;
        outs.push(tape.segment_sum(msg, &edges.center, n)?);
        alphas.push(alpha);
    }
    let mut acc = outs[0];
    for &o in &outs[1..] {
        acc = match combine {
            HeadCombine::Concat => tape.concat_cols(acc, o)?,
            HeadCombine::Average => tape.add(acc, o)?,
        };
    }
    if combine == HeadCombine::Average && outs.len() > 1 {
        acc = tape.scale(acc, 1.0 / outs.len() as f64);
    }
    Ok((acc, alphas))
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnRunning {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    /// Momentum update with the batch mean and unbiased batch variance.
    pub fn update(&mut self, batch: &BnRunning) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

/// Batch normalization. In training mode the output is standardized with
/// the batch statistics, which are returned for the caller to fold into
/// the running statistics. A training batch of one row cannot be
/// standardized and falls back to the running statistics.
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    scale: Var,
    shift: Var,
    running: &BnRunning,
    training: bool,
) -> Result<(Var, Option<BnRunning>)> {
    let (m, d) = (tape.value(x).rows(), tape.value(x).cols());
    if running.mean.len() != d || tape.value(scale).cols() != d {
        return Err(BgnnError::shape(
            "batch_norm",
            format!("{d} features against {} running statistics", running.mean.len()),
        ));
    }
    let (normed, stats) = if training && m > 1 {
        let xv = tape.value(x);
        let mut mean = vec![0.0; d];
        for i in 0..m {
            for (mu, v) in mean.iter_mut().zip(xv.row(i)) {
                *mu += v / m as f64;
            }
        }
        let mut var = vec![0.0; d];
        for i in 0..m {
            for j in 0..d {
                let dv = xv.get(i, j) - mean[j];
                var[j] += dv * dv / (m - 1) as f64;
            }
        }
        (tape.standardize_cols(x, BN_EPS), Some(BnRunning { mean, var }))
    } else {
        if training {
            log::warn!("batch norm on a single-row batch; using running statistics");
        }
        let inv: Vec<f64> = running.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let shift_c: Vec<f64> = running.mean.iter().zip(&inv).map(|(mu, s)| -mu * s).collect();
        let inv = tape.constant(Tensor::matrix(1, d, inv));
        let shift_c = tape.constant(Tensor::matrix(1, d, shift_c));
        let y = tape.mul_row(x, inv)?;
        (tape.add_row(y, shift_c)?, None)
    };
    let y = tape.mul_row(normed, scale)?;
    Ok((tape.add_row(y, shift)?, stats))
}
