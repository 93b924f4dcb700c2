//! Linear CKA between per-layer graph representations.

use std::fmt::Write as _;

use crate::error::{BgnnError, Result};
use crate::graph::{batch_graphs, Graph};
use crate::models::{GnnModel, GraphInput, Task};
use crate::tensor::Tensor;

/// One matrix per layer; row `i` describes example (graph) `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationSet {
    pub tag: String,
    pub layers: Vec<Tensor>,
}

/// Per-graph mean of the node embeddings at every layer (eval mode).
pub fn extract_layer_representations(model: &GnnModel, graphs: &[Graph], tag: &str) -> Result<RepresentationSet> {
    if graphs.is_empty() {
        return Err(BgnnError::contract("representations need at least one graph"));
    }
    let labels: Vec<usize> = graphs.iter().map(|g| g.graph_label().unwrap_or(0)).collect();
    let batch = batch_graphs(graphs, &labels)?;
    let input = match model.config().task {
        Task::Graph => GraphInput::from_batch(&batch),
        Task::Node => GraphInput::from_graph(&batch.graph),
    };
    let reps = model.representations(&input)?;
    let n = graphs.len();
    let layers = reps
        .into_iter()
        .map(|h| {
            let d = h.cols();
            let mut out = vec![0.0; n * d];
            for (i, &g) in batch.graph_ids.iter().enumerate() {
                for (o, v) in out[g * d..(g + 1) * d].iter_mut().zip(h.row(i)) {
                    *o += v;
                }
            }
            for (g, &count) in batch.node_counts.iter().enumerate() {
                if count > 0 {
                    out[g * d..(g + 1) * d].iter_mut().for_each(|v| *v /= count as f64);
                }
            }
            Tensor::matrix(n, d, out)
        })
        .collect();
    Ok(RepresentationSet {
        tag: tag.to_string(),
        layers,
    })
}

fn center_columns(x: &Tensor) -> Tensor {
    let (n, p) = (x.rows(), x.cols());
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n as f64;
        }
    }
    let data = (0..n)
        .flat_map(|i| x.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    Tensor::matrix(n, p, data)
}

fn frobenius_sq(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum()
}

/// `‖Ỹᵀ X̃‖²_F / (‖X̃ᵀ X̃‖_F · ‖Ỹᵀ Ỹ‖_F)` with column-centered inputs.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(BgnnError::contract(format!("CKA inputs have {} and {} rows", x.rows(), y.rows())));
    }
    if x.rows() < 2 {
        return Err(BgnnError::Degenerate("CKA needs at least two examples".into()));
    }
    let (xc, yc) = (center_columns(x), center_columns(y));
    let xt = xc.transpose();
    let yt = yc.transpose();
    let cross = frobenius_sq(&yt.matmul(&xc)?);
    let xx = frobenius_sq(&xt.matmul(&xc)?).sqrt();
    let yy = frobenius_sq(&yt.matmul(&yc)?).sqrt();
    // relative to the raw scale, so that rounding residue counts as zero
    let tiny = |c: &Tensor, raw: &Tensor| {
        let scale = raw.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        c.data().iter().all(|v| v.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE))
    };
    if tiny(&xc, x) || tiny(&yc, y) {
        return Err(BgnnError::Degenerate("an input has zero variance after centering".into()));
    }
    Ok((cross / (xx * yy)).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CkaEntry {
    pub model_a: String,
    /// 1-based layer number.
    pub layer_a: usize,
    pub model_b: String,
    pub layer_b: usize,
    pub cka: f64,
}

/// Layer-by-layer CKA for every unordered pair of sets (including each set
/// with itself).
pub fn cka_matrix(sets: &[RepresentationSet]) -> Result<Vec<CkaEntry>> {
    let rows = sets.first().and_then(|s| s.layers.first()).map(Tensor::rows);
    for s in sets {
        if s.layers.iter().any(|l| Some(l.rows()) != rows) {
            return Err(BgnnError::contract(format!(
                "representation set `{}` does not share the example count",
                s.tag
            )));
        }
    }
    let mut out = Vec::new();
    for (a, sa) in sets.iter().enumerate() {
        for sb in &sets[a..] {
            for (la, xa) in sa.layers.iter().enumerate() {
                for (lb, xb) in sb.layers.iter().enumerate() {
                    out.push(CkaEntry {
                        model_a: sa.tag.clone(),
                        layer_a: la + 1,
                        model_b: sb.tag.clone(),
                        layer_b: lb + 1,
                        cka: linear_cka(xa, xb)?,
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn cka_csv(entries: &[CkaEntry]) -> String {
    let mut s = String::from("model_a,layer_a,model_b,layer_b,cka\n");
    for e in entries {
        let _ = writeln!(s, "{},{},{},{},{:.6}", e.model_a, e.layer_a, e.model_b, e.layer_b, e.cka);
    }
    s
}
