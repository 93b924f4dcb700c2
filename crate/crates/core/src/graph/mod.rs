//! Graph containers and dataset plumbing.

mod bundle;
mod synthetic;
mod transform;
mod tu;

pub use bundle::{load_json_bundle, parse_json_bundle, save_json_bundle, to_json_bundle, KnownStats};
pub use synthetic::{generate_graph_classification, generate_sbm, GraphSetConfig, SbmConfig};
pub use transform::{
    batch_graphs, mean_neighbor_matrix, normalize_adjacency, one_hot_degree_features, random_split,
    row_normalize_features, sample_neighbors, sample_neighbors_with, Fanout, SplitRatios,
};
pub use tu::{load_tu_dataset, write_tu_dataset, TuDataset};

use serde::{Deserialize, Serialize};

use crate::error::{BgnnError, Result};
use crate::tensor::Tensor;

/// Boolean node masks for the three evaluation splits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn from_indices(n: usize, split: &DatasetSplit) -> Result<Self> {
        let mut masks = SplitMasks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        };
        for (idx, mask) in [
            (&split.train, &mut masks.train),
            (&split.val, &mut masks.val),
            (&split.test, &mut masks.test),
        ] {
            for &i in idx {
                if i >= n {
                    return Err(BgnnError::index("SplitMasks", format!("index {i} >= {n}")));
                }
                mask[i] = true;
            }
        }
        masks.validate(n)?;
        Ok(masks)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.train.len() != n || self.val.len() != n || self.test.len() != n {
            return Err(BgnnError::shape("SplitMasks", format!("masks must have length {n}")));
        }
        for i in 0..n {
            let hits = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if hits > 1 {
                return Err(BgnnError::contract(format!("node {i} belongs to more than one split")));
            }
        }
        Ok(())
    }

    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }
}

/// An undirected graph with node features; every edge is stored in both
/// directions, self-loops are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    node_labels: Option<Vec<usize>>,
    graph_label: Option<usize>,
    masks: Option<SplitMasks>,
}

impl Graph {
    /// Builds from undirected pairs. Pairs may appear in either or both
    /// directions; duplicates and self-loops are dropped.
    pub fn from_undirected(n_nodes: usize, pairs: &[(usize, usize)], features: Tensor) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len() * 2);
        for &(u, v) in pairs {
            if u >= n_nodes || v >= n_nodes {
                return Err(BgnnError::index(
                    "Graph::from_undirected",
                    format!("edge ({u}, {v}) with {n_nodes} nodes"),
                ));
            }
            if u != v {
                edges.push((u, v));
                edges.push((v, u));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Self::from_directed(n_nodes, edges, features)
    }

    /// Builds from an explicit directed edge list, which must already be
    /// symmetric. Edges are stored sorted.
    pub fn from_directed(n_nodes: usize, mut edges: Vec<(usize, usize)>, features: Tensor) -> Result<Self> {
        if features.rows() != n_nodes {
            return Err(BgnnError::shape(
                "Graph",
                format!("{} feature rows for {n_nodes} nodes", features.rows()),
            ));
        }
        if let Some(&(u, v)) = edges.iter().find(|(u, v)| *u >= n_nodes || *v >= n_nodes) {
            return Err(BgnnError::index("Graph", format!("edge ({u}, {v}) with {n_nodes} nodes")));
        }
        edges.sort_unstable();
        edges.dedup();
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u == v || edges.binary_search(&(v, u)).is_err()) {
            return Err(BgnnError::contract(format!(
                "edge ({u}, {v}) is a self-loop or lacks its reverse"
            )));
        }
        let features = if features.shape().len() == 2 {
            features
        } else {
            Tensor::matrix(n_nodes, features.cols(), features.into_data())
        };
        Ok(Self {
            n_nodes,
            edges,
            features,
            node_labels: None,
            graph_label: None,
            masks: None,
        })
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n_nodes {
            return Err(BgnnError::shape(
                "Graph::with_node_labels",
                format!("{} labels for {} nodes", labels.len(), self.n_nodes),
            ));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn with_masks(mut self, masks: SplitMasks) -> Result<Self> {
        masks.validate(self.n_nodes)?;
        self.masks = Some(masks);
        Ok(self)
    }

    pub fn with_features(mut self, features: Tensor) -> Result<Self> {
        if features.rows() != self.n_nodes {
            return Err(BgnnError::shape(
                "Graph::with_features",
                format!("{} feature rows for {} nodes", features.rows(), self.n_nodes),
            ));
        }
        self.features = features;
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Directed edge entries (each undirected edge counted twice).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_undirected_edges(&self) -> usize {
        self.edges.iter().filter(|(u, v)| u < v).count()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn graph_label(&self) -> Option<usize> {
        self.graph_label
    }

    pub fn masks(&self) -> Option<&SplitMasks> {
        self.masks.as_ref()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(u, _) in &self.edges {
            deg[u] += 1;
        }
        deg
    }

    /// Sorted adjacency lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Number of classes implied by the node labels.
    pub fn n_node_classes(&self) -> usize {
        self.node_labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    /// Applies `perm` (old index → new index) to nodes.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.n_nodes;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(BgnnError::contract("permute_nodes needs a permutation"));
        }
        let d = self.feature_dim();
        let mut feats = vec![0.0; n * d];
        for old in 0..n {
            feats[perm[old] * d..(perm[old] + 1) * d].copy_from_slice(self.features.row(old));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut g = Graph::from_directed(n, edges, Tensor::matrix(n, d, feats))?;
        if let Some(labels) = &self.node_labels {
            let mut nl = vec![0; n];
            for old in 0..n {
                nl[perm[old]] = labels[old];
            }
            g.node_labels = Some(nl);
        }
        g.graph_label = self.graph_label;
        Ok(g)
    }
}

/// Several graphs merged block-diagonally into one.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    pub graph: Graph,
    pub graph_ids: Vec<usize>,
    pub n_graphs: usize,
    pub labels: Vec<usize>,
    pub node_counts: Vec<usize>,
}

impl GraphBatch {
    /// Splits the batch back into its member graphs.
    pub fn unbatch(&self) -> Result<Vec<Graph>> {
        let d = self.graph.feature_dim();
        let mut out = Vec::with_capacity(self.n_graphs);
        let mut offset = 0;
        let mut edge_iter = self.graph.edges().iter().peekable();
        for (gi, &count) in self.node_counts.iter().enumerate() {
            let mut edges = Vec::new();
            while let Some(&&(u, v)) = edge_iter.peek() {
                if u >= offset + count {
                    break;
                }
                edges.push((u - offset, v - offset));
                edge_iter.next();
            }
            let feats = Tensor::matrix(
                count,
                d,
                self.graph.features().data()[offset * d..(offset + count) * d].to_vec(),
            );
            let mut g = Graph::from_directed(count, edges, feats)?;
            if let Some(labels) = self.graph.node_labels() {
                g = g.with_node_labels(labels[offset..offset + count].to_vec())?;
            }
            if let Some(&label) = self.labels.get(gi) {
                g = g.with_graph_label(label);
            }
            out.push(g);
            offset += count;
        }
        Ok(out)
    }
}

/// Index lists for the three splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub ratios: SplitRatios,
    pub seed: u64,
}
