//! Define-by-run reverse-mode tape.
//!
//! A fresh [`Tape`] is built for every forward pass. Leaves are copied in
//! (or shared through an `Arc`), every operation appends a node whose inputs
//! precede it, and [`Tape::backward`] walks the nodes in reverse. Backward
//! borrows the tape immutably, so running it twice yields identical
//! gradients.

use std::sync::Arc;

use rand::Rng;

use super::{gemm_nn, gemm_nt, gemm_tn, SparseMatrix, Tensor, PROB_FLOOR};
use crate::error::{BgnnError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Temperature used by the softened softmax family.
#[derive(Clone, Copy, Debug)]
pub enum Temperature {
    Scalar(f64),
    /// One temperature per row, an `m×1` node (may carry gradient).
    PerRow(Var),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    Elu { alpha: f64 },
    LeakyRelu { slope: f64 },
    Log,
    Exp,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(UnaryOp, Var),
    SoftmaxRows(Var),
    LogSoftmaxRows {
        input: Var,
        probs: Vec<f64>,
        clamped: Vec<bool>,
    },
    SegmentSum {
        input: Var,
        ids: Arc<[usize]>,
    },
    SegmentSoftmax {
        input: Var,
        ids: Arc<[usize]>,
        n_segments: usize,
    },
    GatherRows {
        input: Var,
        idx: Arc<[usize]>,
    },
    ConcatCols(Var, Var),
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    SumAll(Var),
    StandardizeCols {
        input: Var,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`, or `None` when `var` does not
    /// influence the loss or does not require gradients.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a vector, zeros when absent.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(BgnnError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut value = value;
        // Values on the tape are always viewed as 2-D.
        if value.shape().len() != 2 {
            let (r, c) = (value.rows(), value.cols());
            value = Tensor::matrix(r, c, value.into_data());
        }
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a copy of `t`; it receives gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let flag = t.requires_grad();
        self.push(t.detached(), Op::Leaf, flag)
    }

    /// Records `t` as a parameter that always receives gradients.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    /// Shares an existing 2-D tensor as a constant without copying it.
    pub fn shared(&mut self, t: Arc<Tensor>) -> Var {
        assert_eq!(t.shape().len(), 2, "shared tape constants must be 2-D");
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(BgnnError::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), needs))
    }

    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, d: Var) -> Result<Var> {
        let out = s.spmm(self.value(d))?;
        let needs = self.needs(d);
        Ok(self.push(out, Op::SpMM(Arc::clone(s), d), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape("add", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::matrix(av.rows(), av.cols(), data);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    /// Elementwise product of equally shaped operands.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape("mul", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::matrix(av.rows(), av.cols(), data);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    /// Adds a `1×n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.len() != xv.cols() {
            return Err(BgnnError::shape(
                "add_row",
                format!("row {:?} for matrix {:?}", rv.shape(), xv.shape()),
            ));
        }
        let n = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + rv.data()[i % n])
            .collect();
        let out = Tensor::matrix(xv.rows(), n, data);
        let needs = self.needs(x) || self.needs(row);
        Ok(self.push(out, Op::AddRow(x, row), needs))
    }

    /// Multiplies every row of `x` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.len() != xv.cols() {
            return Err(BgnnError::shape(
                "mul_row",
                format!("row {:?} for matrix {:?}", rv.shape(), xv.shape()),
            ));
        }
        let n = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * rv.data()[i % n])
            .collect();
        let out = Tensor::matrix(xv.rows(), n, data);
        let needs = self.needs(x) || self.needs(row);
        Ok(self.push(out, Op::MulRow(x, row), needs))
    }

    /// Scales row `i` of `x` by entry `i` of an `m×1` column.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.len() != xv.rows() {
            return Err(BgnnError::shape(
                "mul_col",
                format!("column {:?} for matrix {:?}", cv.shape(), xv.shape()),
            ));
        }
        let n = xv.cols().max(1);
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * cv.data()[i / n])
            .collect();
        let out = Tensor::matrix(xv.rows(), xv.cols(), data);
        let needs = self.needs(x) || self.needs(col);
        Ok(self.push(out, Op::MulCol(x, col), needs))
    }

    /// Divides row `i` of `x` by entry `i` of an `m×1` column.
    pub fn div_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.len() != xv.rows() {
            return Err(BgnnError::shape(
                "div_col",
                format!("column {:?} for matrix {:?}", cv.shape(), xv.shape()),
            ));
        }
        if cv.data().contains(&0.0) {
            return Err(BgnnError::domain("div_col", "division by zero"));
        }
        let n = xv.cols().max(1);
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v / cv.data()[i / n])
            .collect();
        let out = Tensor::matrix(xv.rows(), xv.cols(), data);
        let needs = self.needs(x) || self.needs(col);
        Ok(self.push(out, Op::DivCol(x, col), needs))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::matrix(xv.rows(), xv.cols(), xv.data().iter().map(|v| v * k).collect());
        let needs = self.needs(x);
        self.push(out, Op::Scale(x, k), needs)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::matrix(xv.rows(), xv.cols(), xv.data().iter().map(|v| v + k).collect());
        let needs = self.needs(x);
        self.push(out, Op::AddScalar(x), needs)
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if op == UnaryOp::Log {
            if let Some(bad) = xv.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(BgnnError::domain("log", format!("non-positive input {bad}")));
            }
        }
        let f: fn(f64, UnaryOp) -> f64 = |v, op| match op {
            UnaryOp::Relu => v.max(0.0),
            UnaryOp::Sigmoid => {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            }
            UnaryOp::Elu { alpha } => {
                if v > 0.0 {
                    v
                } else {
                    alpha * v.exp_m1()
                }
            }
            UnaryOp::LeakyRelu { slope } => {
                if v > 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            UnaryOp::Log => v.ln(),
            UnaryOp::Exp => v.exp(),
            UnaryOp::Tanh => v.tanh(),
        };
        let out = Tensor::matrix(xv.rows(), xv.cols(), xv.data().iter().map(|&v| f(v, op)).collect());
        let needs = self.needs(x);
        Ok(self.push(out, Op::Unary(op, x), needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Relu, x).expect("relu has no domain restriction")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, x).expect("sigmoid has no domain restriction")
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        self.unary(UnaryOp::Elu { alpha }, x).expect("elu has no domain restriction")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(UnaryOp::LeakyRelu { slope }, x)
            .expect("leaky relu has no domain restriction")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Exp, x).expect("exp has no domain restriction")
    }

    fn apply_temperature(&mut self, op: &'static str, z: Var, tau: Temperature) -> Result<Var> {
        match tau {
            Temperature::Scalar(t) => {
                if !(t > 0.0) || !t.is_finite() {
                    return Err(BgnnError::domain(op, format!("temperature {t} must be positive")));
                }
                if t == 1.0 {
                    Ok(z)
                } else {
                    Ok(self.scale(z, 1.0 / t))
                }
            }
            Temperature::PerRow(col) => {
                if let Some(bad) = self.value(col).data().iter().find(|&&t| !(t > 0.0)) {
                    return Err(BgnnError::domain(op, format!("temperature {bad} must be positive")));
                }
                self.div_col(z, col)
            }
        }
    }

    /// Row-wise softmax of `z / tau`, computed with max subtraction.
    pub fn softmax_rows(&mut self, z: Var, tau: Temperature) -> Result<Var> {
        let scaled = self.apply_temperature("softmax_rows", z, tau)?;
        let xv = self.value(scaled);
        let out = softmax_rows_values(xv);
        let needs = self.needs(scaled);
        Ok(self.push(out, Op::SoftmaxRows(scaled), needs))
    }

    /// Row-wise `log(max(softmax(z / tau), 1e-10))`.
    pub fn log_softmax_rows(&mut self, z: Var, tau: Temperature) -> Result<Var> {
        let scaled = self.apply_temperature("log_softmax_rows", z, tau)?;
        let xv = self.value(scaled);
        let (r, c) = (xv.rows(), xv.cols());
        let floor = PROB_FLOOR.ln();
        let mut out = vec![0.0; r * c];
        let mut probs = vec![0.0; r * c];
        let mut clamped = vec![false; r * c];
        for i in 0..r {
            let row = xv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                let ls = row[j] - lse;
                probs[i * c + j] = ls.exp();
                if ls < floor {
                    out[i * c + j] = floor;
                    clamped[i * c + j] = true;
                } else {
                    out[i * c + j] = ls;
                }
            }
        }
        let needs = self.needs(scaled);
        Ok(self.push(
            Tensor::matrix(r, c, out),
            Op::LogSoftmaxRows {
                input: scaled,
                probs,
                clamped,
            },
            needs,
        ))
    }

    /// Sums rows of `x` into `n_segments` buckets given by `ids`.
    pub fn segment_sum(&mut self, x: Var, ids: &[usize], n_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        if ids.len() != xv.rows() {
            return Err(BgnnError::shape(
                "segment_sum",
                format!("{} ids for {} rows", ids.len(), xv.rows()),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&s| s >= n_segments) {
            return Err(BgnnError::index(
                "segment_sum",
                format!("segment id {bad} >= {n_segments}"),
            ));
        }
        let d = xv.cols();
        let mut out = vec![0.0; n_segments * d];
        for (i, &s) in ids.iter().enumerate() {
            let src = xv.row(i);
            for (o, v) in out[s * d..(s + 1) * d].iter_mut().zip(src) {
                *o += v;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::matrix(n_segments, d, out),
            Op::SegmentSum {
                input: x,
                ids: ids.into(),
            },
            needs,
        ))
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    pub fn segment_softmax(&mut self, x: Var, ids: &[usize], n_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        if ids.len() != xv.rows() {
            return Err(BgnnError::shape(
                "segment_softmax",
                format!("{} ids for {} rows", ids.len(), xv.rows()),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&s| s >= n_segments) {
            return Err(BgnnError::index(
                "segment_softmax",
                format!("segment id {bad} >= {n_segments}"),
            ));
        }
        let c = xv.cols();
        let mut max = vec![f64::NEG_INFINITY; n_segments * c];
        for (i, &s) in ids.iter().enumerate() {
            for (m, v) in max[s * c..(s + 1) * c].iter_mut().zip(xv.row(i)) {
                *m = m.max(*v);
            }
        }
        let mut out = vec![0.0; xv.len()];
        let mut denom = vec![0.0; n_segments * c];
        for (i, &s) in ids.iter().enumerate() {
            for j in 0..c {
                let e = (xv.get(i, j) - max[s * c + j]).exp();
                out[i * c + j] = e;
                denom[s * c + j] += e;
            }
        }
        for (i, &s) in ids.iter().enumerate() {
            for j in 0..c {
                out[i * c + j] /= denom[s * c + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::matrix(xv.rows(), c, out),
            Op::SegmentSoftmax {
                input: x,
                ids: ids.into(),
                n_segments,
            },
            needs,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(BgnnError::index(
                "gather_rows",
                format!("row {bad} of {}", xv.rows()),
            ));
        }
        let out = xv.select_rows(idx);
        let needs = self.needs(x);
        Ok(self.push(
            out,
            Op::GatherRows {
                input: x,
                idx: idx.into(),
            },
            needs,
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(BgnnError::shape(
                "concat_cols",
                format!("{:?} and {:?} differ in rows", av.shape(), bv.shape()),
            ));
        }
        let (m, p, q) = (av.rows(), av.cols(), bv.cols());
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(av.row(i));
            out.extend_from_slice(bv.row(i));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(m, p + q, out), Op::ConcatCols(a, b), needs))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`; identity when
    /// not training or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(BgnnError::domain("dropout", format!("probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::matrix(xv.rows(), xv.cols(), data);
        let needs = self.needs(x);
        Ok(self.push(out, Op::Dropout { input: x, mask }, needs))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), needs)
    }

    /// Column-wise standardization with the biased batch variance.
    pub fn standardize_cols(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        let mut mean = vec![0.0; n];
        for i in 0..m {
            for (mu, v) in mean.iter_mut().zip(xv.row(i)) {
                *mu += v;
            }
        }
        mean.iter_mut().for_each(|mu| *mu /= m as f64);
        let mut var = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                let d = xv.get(i, j) - mean[j];
                var[j] += d * d;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / m as f64 + eps).sqrt()).collect();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (xv.get(i, j) - mean[j]) * inv_std[j];
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::matrix(m, n, out), Op::StandardizeCols { input: x, inv_std }, needs)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(BgnnError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.needs(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, bv.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(av.data(), g, &mut db, m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::SpMM(s, d) => {
                if self.needs(*d) {
                    let n = out.cols();
                    let mut dd = vec![0.0; s.n_cols() * n];
                    s.spmm_transpose_into(g, n, &mut dd);
                    self.accumulate(grads, *d, dd);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.to_vec());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.iter().zip(bv.data()).map(|(x, y)| x * y).collect());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.iter().zip(av.data()).map(|(x, y)| x * y).collect());
                }
            }
            Op::AddRow(x, row) => {
                let n = out.cols();
                if self.needs(*x) {
                    self.accumulate(grads, *x, g.to_vec());
                }
                if self.needs(*row) {
                    let mut dr = vec![0.0; n];
                    for (k, gv) in g.iter().enumerate() {
                        dr[k % n] += gv;
                    }
                    self.accumulate(grads, *row, dr);
                }
            }
            Op::MulRow(x, row) => {
                let n = out.cols();
                let (xv, rv) = (self.value(*x), self.value(*row));
                if self.needs(*x) {
                    let dx = g.iter().enumerate().map(|(k, gv)| gv * rv.data()[k % n]).collect();
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*row) {
                    let mut dr = vec![0.0; n];
                    for (k, (gv, xv)) in g.iter().zip(xv.data()).enumerate() {
                        dr[k % n] += gv * xv;
                    }
                    self.accumulate(grads, *row, dr);
                }
            }
            Op::MulCol(x, col) => {
                let n = out.cols().max(1);
                let (xv, cv) = (self.value(*x), self.value(*col));
                if self.needs(*x) {
                    let dx = g.iter().enumerate().map(|(k, gv)| gv * cv.data()[k / n]).collect();
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*col) {
                    let mut dc = vec![0.0; cv.len()];
                    for (k, (gv, xv)) in g.iter().zip(xv.data()).enumerate() {
                        dc[k / n] += gv * xv;
                    }
                    self.accumulate(grads, *col, dc);
                }
            }
            Op::DivCol(x, col) => {
                let n = out.cols().max(1);
                let (xv, cv) = (self.value(*x), self.value(*col));
                if self.needs(*x) {
                    let dx = g.iter().enumerate().map(|(k, gv)| gv / cv.data()[k / n]).collect();
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*col) {
                    let mut dc = vec![0.0; cv.len()];
                    for (k, (gv, xv)) in g.iter().zip(xv.data()).enumerate() {
                        let c = cv.data()[k / n];
                        dc[k / n] -= gv * xv / (c * c);
                    }
                    self.accumulate(grads, *col, dc);
                }
            }
            Op::Scale(x, k) => {
                if self.needs(*x) {
                    self.accumulate(grads, *x, g.iter().map(|v| v * k).collect());
                }
            }
            Op::AddScalar(x) => {
                if self.needs(*x) {
                    self.accumulate(grads, *x, g.to_vec());
                }
            }
            Op::Unary(op, x) => {
                if !self.needs(*x) {
                    return;
                }
                let xv = self.value(*x);
                let y = out.data();
                let dx = g
                    .iter()
                    .zip(xv.data())
                    .zip(y)
                    .map(|((gv, &xi), &yi)| {
                        gv * match *op {
                            UnaryOp::Relu => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Sigmoid => yi * (1.0 - yi),
                            UnaryOp::Elu { alpha } => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    yi + alpha
                                }
                            }
                            UnaryOp::LeakyRelu { slope } => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    slope
                                }
                            }
                            UnaryOp::Log => 1.0 / xi,
                            UnaryOp::Exp => yi,
                            UnaryOp::Tanh => 1.0 - yi * yi,
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::SoftmaxRows(x) => {
                if !self.needs(*x) {
                    return;
                }
                let c = out.cols();
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for r in 0..out.rows() {
                    let span = r * c..(r + 1) * c;
                    let dot: f64 = g[span.clone()].iter().zip(&y[span.clone()]).map(|(a, b)| a * b).sum();
                    for k in span {
                        dx[k] = y[k] * (g[k] - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmaxRows { input, probs, clamped } => {
                if !self.needs(*input) {
                    return;
                }
                let c = out.cols();
                let mut dx = vec![0.0; probs.len()];
                for r in 0..out.rows() {
                    let span = r * c..(r + 1) * c;
                    let total: f64 = span.clone().filter(|&k| !clamped[k]).map(|k| g[k]).sum();
                    for k in span {
                        let own = if clamped[k] { 0.0 } else { g[k] };
                        dx[k] = own - probs[k] * total;
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::SegmentSum { input, ids } => {
                if !self.needs(*input) {
                    return;
                }
                let d = out.cols();
                let mut dx = Vec::with_capacity(ids.len() * d);
                for &s in ids.iter() {
                    dx.extend_from_slice(&g[s * d..(s + 1) * d]);
                }
                self.accumulate(grads, *input, dx);
            }
            Op::SegmentSoftmax { input, ids, n_segments } => {
                if !self.needs(*input) {
                    return;
                }
                let c = out.cols();
                let y = out.data();
                let mut dot = vec![0.0; n_segments * c];
                for (i, &s) in ids.iter().enumerate() {
                    for j in 0..c {
                        dot[s * c + j] += g[i * c + j] * y[i * c + j];
                    }
                }
                let mut dx = vec![0.0; y.len()];
                for (i, &s) in ids.iter().enumerate() {
                    for j in 0..c {
                        let k = i * c + j;
                        dx[k] = y[k] * (g[k] - dot[s * c + j]);
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::GatherRows { input, idx } => {
                if !self.needs(*input) {
                    return;
                }
                let src = self.value(*input);
                let d = src.cols();
                let mut dx = vec![0.0; src.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for (o, gv) in dx[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *o += gv;
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::ConcatCols(a, b) => {
                let (p, q) = (self.value(*a).cols(), self.value(*b).cols());
                let w = p + q;
                if self.needs(*a) {
                    let da = (0..out.rows()).flat_map(|r| g[r * w..r * w + p].iter().copied()).collect();
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = (0..out.rows())
                        .flat_map(|r| g[r * w + p..(r + 1) * w].iter().copied())
                        .collect();
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Dropout { input, mask } => {
                if self.needs(*input) {
                    self.accumulate(grads, *input, g.iter().zip(mask).map(|(a, b)| a * b).collect());
                }
            }
            Op::SumAll(x) => {
                if self.needs(*x) {
                    let n = self.value(*x).len();
                    self.accumulate(grads, *x, vec![g[0]; n]);
                }
            }
            Op::StandardizeCols { input, inv_std } => {
                if !self.needs(*input) {
                    return;
                }
                let (m, n) = (out.rows(), out.cols());
                let xhat = out.data();
                let mut sum_g = vec![0.0; n];
                let mut sum_gx = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        sum_g[j] += g[i * n + j];
                        sum_gx[j] += g[i * n + j] * xhat[i * n + j];
                    }
                }
                let mf = m as f64;
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let k = i * n + j;
                        dx[k] = inv_std[j] / mf * (mf * g[k] - sum_g[j] - xhat[k] * sum_gx[j]);
                    }
                }
                self.accumulate(grads, *input, dx);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contribution),
        }
    }
}

/// Stable row softmax on plain values.
pub fn softmax_rows_values(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = x.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..c {
            let e = (row[j] - max).exp();
            out[i * c + j] = e;
            total += e;
        }
        out[i * c..(i + 1) * c].iter_mut().for_each(|v| *v /= total);
    }
    Tensor::matrix(r, c, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::identity(2));
        let m = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let z = tape.constant(Tensor::zeros(2, 3));
        let p = tape.matmul(m, z).unwrap();
        assert_eq!(tape.value(p).data(), &[0.0; 6]);

        let a = tape.constant(t(&[vec![1.0, 2.0]]));
        let b = tape.constant(t(&[vec![3.0], vec![4.0]]));
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[11.0]);

        let err = tape.matmul(a, a).unwrap_err().to_string();
        assert!(err.contains("[1, 2]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let eq = tape.constant(t(&[vec![3.0, 3.0, 3.0, 3.0]]));
        let s = tape.softmax_rows(eq, Temperature::Scalar(2.7)).unwrap();
        for v in tape.value(s).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let z = tape.constant(t(&[vec![2.0, 0.0]]));
        let s = tape.softmax_rows(z, Temperature::Scalar(1.0)).unwrap();
        let e2 = 2f64.exp();
        assert!((tape.value(s).data()[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((tape.value(s).data()[0] - 0.8808).abs() < 1e-4);
        assert!((tape.value(s).data()[1] - 0.1192).abs() < 1e-4);
        let s = tape.softmax_rows(z, Temperature::Scalar(1e6)).unwrap();
        for v in tape.value(s).data() {
            assert!((v - 0.5).abs() < 1e-5);
        }
        assert!(matches!(
            tape.softmax_rows(z, Temperature::Scalar(0.0)),
            Err(BgnnError::Domain { .. })
        ));
        let bad = tape.constant(Tensor::column(vec![-1.0]));
        assert!(tape.softmax_rows(z, Temperature::PerRow(bad)).is_err());
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![-1.0, 0.0, 2.0]]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).data(), &[0.5]);
        let m1 = tape.constant(Tensor::scalar(-1.0));
        let e = tape.elu(m1, 1.0);
        assert!((tape.value(e).data()[0] - ((-1f64).exp() - 1.0)).abs() < 1e-15);
        assert!((tape.value(e).data()[0] + 0.6321).abs() < 1e-4);
        assert!(matches!(tape.log(x), Err(BgnnError::Domain { .. })));
    }

    #[test]
    fn segment_sum_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]));
        let s = tape.segment_sum(x, &[0, 0, 1], 2).unwrap();
        assert_eq!(tape.value(s).data(), &[3.0, 3.0, 3.0, 3.0]);
        let one = tape.segment_sum(x, &[0, 0, 0], 1).unwrap();
        assert_eq!(tape.value(one).data(), &[6.0, 6.0]);
        let ident = tape.segment_sum(x, &[0, 1, 2], 3).unwrap();
        assert_eq!(tape.value(ident).data(), tape.value(x).data());
        let empty = tape.segment_sum(x, &[0, 0, 2], 4).unwrap();
        assert_eq!(&tape.value(empty).data()[2..4], &[0.0, 0.0]);
        assert!(matches!(
            tape.segment_sum(x, &[0, 5, 1], 2),
            Err(BgnnError::Index { .. })
        ));
    }

    #[test]
    fn concat_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0]]));
        let b = tape.constant(t(&[vec![2.0]]));
        let c = tape.concat_cols(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0]);
        let x = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let empty = tape.constant(Tensor::zeros(2, 0));
        let c = tape.concat_cols(x, empty).unwrap();
        assert_eq!(tape.value(c).data(), tape.value(x).data());
        assert_eq!(tape.value(c).shape(), &[2, 2]);
        assert!(tape.concat_cols(a, x).is_err());
    }

    #[test]
    fn concat_gradient_is_ones() {
        let a = Tensor::from_rows(&[vec![0.3, -0.2], vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.5], vec![-0.5]]).unwrap();
        let mut tape = Tape::new();
        let av = tape.param(&a);
        let bv = tape.leaf(&b);
        let c = tape.concat_cols(av, bv).unwrap();
        let loss = tape.sum_all(c);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(av).unwrap(), &[1.0; 4]);
        assert!(g.get(bv).is_none());
        let report = check_gradients(&[a, b], 1e-5, |tape, v| {
            let c = tape.concat_cols(v[0], v[1])?;
            Ok(tape.sum_all(c))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4);
    }

    #[test]
    fn dropout_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(1, 100_000, 1.0));
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.9, false, &mut rng).unwrap(), x);
        let d = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        let mean = tape.value(d).data().iter().sum::<f64>() / 100_000.0;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn backward_examples() {
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let s = tape.sum_all(xv);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(xv).unwrap(), &[1.0; 4]);

        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let sq = tape.mul(xv, xv).unwrap();
        let s = tape.sum_all(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(xv).unwrap(), &[2.0, -4.0, 1.0, 6.0]);

        let err = tape.backward(xv).unwrap_err();
        assert!(matches!(err, BgnnError::Contract(_)));
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_tensor(&mut rng, 3, 4);
        let w = random_tensor(&mut rng, 4, 2);
        let mut tape = Tape::new();
        let av = tape.param(&a);
        let wv = tape.param(&w);
        let h = tape.matmul(av, wv).unwrap();
        let h = tape.elu(h, 1.0);
        let s = tape.log_softmax_rows(h, Temperature::Scalar(1.7)).unwrap();
        let loss = tape.sum_all(s);
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert_eq!(g1.get(av), g2.get(av));
        assert_eq!(g1.get(wv), g2.get(wv));
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![
            random_tensor(&mut rng, 4, 3),
            random_tensor(&mut rng, 3, 2),
            random_tensor(&mut rng, 1, 2),
            Tensor::column(vec![1.3, 2.1, 0.7, 3.0]),
        ];
        let report = check_gradients(&inputs, 1e-5, |tape, v| {
            let h = tape.matmul(v[0], v[1])?;
            let h = tape.add_row(h, v[2])?;
            let h = tape.unary(UnaryOp::Tanh, h)?;
            let p = tape.softmax_rows(h, Temperature::PerRow(v[3]))?;
            let l = tape.log_softmax_rows(h, Temperature::Scalar(2.0))?;
            let m = tape.mul(p, l)?;
            Ok(tape.sum_all(m))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
