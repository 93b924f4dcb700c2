//! JSON node-classification bundles.
//!
//! ```json
//! {
//!   "name": "cora",                       // optional
//!   "n_nodes": 3,
//!   "edges": [[0, 1], [1, 2]],
//!   "features": [[1, 0], [0, 1], [1, 1]], // or {"indices": [[r, c], ...], "values": [...], "shape": [n, d]}
//!   "labels": [0, 1, 0],
//!   "train_idx": [0], "val_idx": [1], "test_idx": [2]
//! }
//! ```
//!
//! Edges may be listed in one or both directions. Saving writes a canonical
//! form: each undirected edge once as `[u, v]` with `u < v`, sorted; sparse
//! features when at most a third of the entries are nonzero.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{DatasetSplit, Graph, SplitMasks, SplitRatios};
use crate::error::{BgnnError, Result};
use crate::tensor::Tensor;

/// Published statistics used as a load-time sanity check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KnownStats {
    pub n_nodes: usize,
    pub n_undirected_edges: usize,
    pub n_features: usize,
    pub n_classes: usize,
}

impl KnownStats {
    pub fn for_name(name: &str) -> Option<Self> {
        let (n_nodes, n_undirected_edges, n_features, n_classes) = match name.to_ascii_lowercase().as_str() {
            "cora" => (2485, 5069, 1433, 7),
            "citeseer" => (2110, 3668, 3703, 6),
            "pubmed" => (19717, 44324, 500, 3),
            "a-computers" | "computers" | "amazon-computers" => (13381, 245778, 767, 10),
            _ => return None,
        };
        Some(Self {
            n_nodes,
            n_undirected_edges,
            n_features,
            n_classes,
        })
    }

    pub fn of(g: &Graph) -> Self {
        Self {
            n_nodes: g.n_nodes(),
            n_undirected_edges: g.n_undirected_edges(),
            n_features: g.feature_dim(),
            n_classes: g.n_node_classes(),
        }
    }
}

struct Ctx<'a> {
    path: &'a Path,
}

impl Ctx<'_> {
    fn err(&self, detail: impl Into<String>) -> BgnnError {
        BgnnError::format(self.path, None, detail)
    }

    fn key<'v>(&self, obj: &'v Map<String, Value>, key: &str) -> Result<&'v Value> {
        obj.get(key).ok_or_else(|| self.err(format!("missing key `{key}`")))
    }

    fn usize_of(&self, v: &Value, key: &str) -> Result<usize> {
        v.as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| self.err(format!("`{key}` must hold non-negative integers, got {v}")))
    }

    fn f64_of(&self, v: &Value, key: &str) -> Result<f64> {
        v.as_f64()
            .ok_or_else(|| self.err(format!("`{key}` must hold numbers, got {v}")))
    }

    fn array<'v>(&self, v: &'v Value, key: &str) -> Result<&'v Vec<Value>> {
        v.as_array().ok_or_else(|| self.err(format!("`{key}` must be an array")))
    }

    fn index_list(&self, obj: &Map<String, Value>, key: &str, n: usize) -> Result<Vec<usize>> {
        let arr = self.array(self.key(obj, key)?, key)?;
        arr.iter()
            .map(|v| {
                let i = self.usize_of(v, key)?;
                if i >= n {
                    return Err(self.err(format!("`{key}` index {i} out of range for {n} nodes")));
                }
                Ok(i)
            })
            .collect()
    }

    fn pair(&self, v: &Value, key: &str) -> Result<(usize, usize)> {
        match v.as_array().map(Vec::as_slice) {
            Some([a, b]) => Ok((self.usize_of(a, key)?, self.usize_of(b, key)?)),
            _ => Err(self.err(format!("`{key}` entries must be pairs, got {v}"))),
        }
    }

    fn features(&self, v: &Value, n: usize) -> Result<Tensor> {
        const KEY: &str = "features";
        if let Some(rows) = v.as_array() {
            if rows.len() != n {
                return Err(self.err(format!("`{KEY}` has {} rows for {n} nodes", rows.len())));
            }
            let d = rows.first().map_or(Ok(0), |r| self.array(r, KEY).map(Vec::len))?;
            let mut data = Vec::with_capacity(n * d);
            for r in rows {
                let r = self.array(r, KEY)?;
                if r.len() != d {
                    return Err(self.err(format!("`{KEY}` rows are ragged")));
                }
                for x in r {
                    data.push(self.f64_of(x, KEY)?);
                }
            }
            return Ok(Tensor::matrix(n, d, data));
        }
        let obj = v
            .as_object()
            .ok_or_else(|| self.err(format!("`{KEY}` must be an array or a sparse object")))?;
        let (rows, d) = self.pair(self.key(obj, "shape")?, "shape")?;
        if rows != n {
            return Err(self.err(format!("`shape` has {rows} rows for {n} nodes")));
        }
        let indices = self.array(self.key(obj, "indices")?, "indices")?;
        let values = self.array(self.key(obj, "values")?, "values")?;
        if indices.len() != values.len() {
            return Err(self.err(format!(
                "`indices` has {} entries but `values` has {}",
                indices.len(),
                values.len()
            )));
        }
        let mut t = Tensor::zeros(n, d);
        for (idx, val) in indices.iter().zip(values) {
            let (r, c) = self.pair(idx, "indices")?;
            if r >= n || c >= d {
                return Err(self.err(format!("`indices` entry ({r}, {c}) out of range for shape [{n}, {d}]")));
            }
            t.set(r, c, t.get(r, c) + self.f64_of(val, "values")?);
        }
        Ok(t)
    }
}

/// Parses bundle text; `path` is only used in error messages.
pub fn parse_json_bundle(text: &str, path: &Path) -> Result<Graph> {
    let ctx = Ctx { path };
    let root: Value = serde_json::from_str(text)
        .map_err(|e| BgnnError::format(path, Some(e.line()), e.to_string()))?;
    let obj = root.as_object().ok_or_else(|| ctx.err("bundle must be a JSON object"))?;

    let n = ctx.usize_of(ctx.key(obj, "n_nodes")?, "n_nodes")?;
    let mut pairs = Vec::new();
    for e in ctx.array(ctx.key(obj, "edges")?, "edges")? {
        let (u, v) = ctx.pair(e, "edges")?;
        if u >= n || v >= n {
            return Err(ctx.err(format!("`edges` entry ({u}, {v}) out of range for {n} nodes")));
        }
        pairs.push((u, v));
    }
    let features = ctx.features(ctx.key(obj, "features")?, n)?;
    let labels_raw = ctx.array(ctx.key(obj, "labels")?, "labels")?;
    if labels_raw.len() != n {
        return Err(ctx.err(format!("`labels` has {} entries for {n} nodes", labels_raw.len())));
    }
    let labels = labels_raw
        .iter()
        .map(|v| ctx.usize_of(v, "labels"))
        .collect::<Result<Vec<_>>>()?;
    let split = DatasetSplit {
        train: ctx.index_list(obj, "train_idx", n)?,
        val: ctx.index_list(obj, "val_idx", n)?,
        test: ctx.index_list(obj, "test_idx", n)?,
        ratios: SplitRatios::default(),
        seed: 0,
    };
    let masks = SplitMasks::from_indices(n, &split).map_err(|e| ctx.err(e.to_string()))?;

    let graph = Graph::from_undirected(n, &pairs, features)?
        .with_node_labels(labels)?
        .with_masks(masks)?;

    if let Some(name) = obj.get("name").and_then(Value::as_str) {
        if let Some(expected) = KnownStats::for_name(name) {
            let found = KnownStats::of(&graph);
            if found != expected {
                log::warn!("{}: `{name}` statistics {found:?} differ from the published {expected:?}", path.display());
            }
        }
    }
    Ok(graph)
}

pub fn load_json_bundle(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| BgnnError::io(path, e))?;
    parse_json_bundle(&text, path)
}

/// Canonical JSON text of a node-classification graph.
pub fn to_json_bundle(g: &Graph, name: Option<&str>) -> Result<String> {
    let labels = g
        .node_labels()
        .ok_or_else(|| BgnnError::contract("a bundle needs node labels"))?;
    let masks = g
        .masks()
        .ok_or_else(|| BgnnError::contract("a bundle needs split masks"))?;
    let edges: Vec<Value> = g
        .edges()
        .iter()
        .filter(|(u, v)| u < v)
        .map(|&(u, v)| json!([u, v]))
        .collect();
    let f = g.features();
    let nnz = f.data().iter().filter(|v| **v != 0.0).count();
    let features = if nnz * 3 <= f.len() {
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for r in 0..f.rows() {
            for (c, &v) in f.row(r).iter().enumerate() {
                if v != 0.0 {
                    indices.push(json!([r, c]));
                    values.push(json!(v));
                }
            }
        }
        json!({ "indices": indices, "values": values, "shape": [f.rows(), f.cols()] })
    } else {
        Value::Array((0..f.rows()).map(|r| json!(f.row(r))).collect())
    };
    let mut obj = Map::new();
    if let Some(name) = name {
        obj.insert("name".into(), json!(name));
    }
    obj.insert("n_nodes".into(), json!(g.n_nodes()));
    obj.insert("edges".into(), Value::Array(edges));
    obj.insert("features".into(), features);
    obj.insert("labels".into(), json!(labels));
    obj.insert("train_idx".into(), json!(SplitMasks::indices(&masks.train)));
    obj.insert("val_idx".into(), json!(SplitMasks::indices(&masks.val)));
    obj.insert("test_idx".into(), json!(SplitMasks::indices(&masks.test)));
    serde_json::to_string(&Value::Object(obj)).map_err(|e| BgnnError::contract(e.to_string()))
}

pub fn save_json_bundle(g: &Graph, name: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_json_bundle(g, name)?;
    fs::write(path, text).map_err(|e| BgnnError::io(path, e))
}
