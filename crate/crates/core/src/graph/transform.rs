use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Graph, GraphBatch};
use crate::error::{BgnnError, Result};
use crate::tensor::{SparseMatrix, Tensor};

/// Symmetric normalized adjacency with self-loops,
/// `D̂^{-1/2} (A + I) D̂^{-1/2}` where `d̂ = degree + 1`.
pub fn normalize_adjacency(g: &Graph) -> SparseMatrix {
    let deg = g.degrees();
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();
    let mut triplets = Vec::with_capacity(g.edges().len() + g.n_nodes());
    for &(u, v) in g.edges() {
        triplets.push((u, v, inv_sqrt[u] * inv_sqrt[v]));
    }
    for (i, s) in inv_sqrt.iter().enumerate() {
        triplets.push((i, i, s * s));
    }
    SparseMatrix::from_triplets(g.n_nodes(), g.n_nodes(), &triplets)
        .expect("edge endpoints were validated at graph construction")
}

/// Row-stochastic matrix averaging each node's listed neighbors; rows with
/// no neighbors are empty (so the mean is the zero vector).
pub fn mean_neighbor_matrix(neighbors: &[Vec<usize>]) -> SparseMatrix {
    let n = neighbors.len();
    let triplets: Vec<_> = neighbors
        .iter()
        .enumerate()
        .flat_map(|(i, list)| {
            let w = 1.0 / list.len().max(1) as f64;
            list.iter().map(move |&j| (i, j, w))
        })
        .collect();
    SparseMatrix::from_triplets(n, n, &triplets).expect("neighbor indices are node ids")
}

/// Replaces node features with a one-hot encoding of `min(degree, cap)`.
///
/// The feature width is `min(max observed degree, cap) + 1`; without a cap
/// the observed maximum over all graphs is used.
pub fn one_hot_degree_features(graphs: &[Graph], cap: Option<usize>) -> Result<Vec<Graph>> {
    let observed = graphs
        .iter()
        .flat_map(|g| g.degrees())
        .max()
        .unwrap_or(0);
    let top = cap.map_or(observed, |c| observed.min(c));
    let dim = top + 1;
    graphs
        .iter()
        .map(|g| {
            let mut feats = Tensor::zeros(g.n_nodes(), dim);
            for (i, d) in g.degrees().into_iter().enumerate() {
                feats.set(i, d.min(top), 1.0);
            }
            g.clone().with_features(feats)
        })
        .collect()
}

/// Scales each feature row to sum to one (rows of zeros are left alone).
pub fn row_normalize_features(g: Graph) -> Result<Graph> {
    let mut feats = g.features().clone();
    let d = feats.cols();
    for i in 0..feats.rows() {
        let row = &mut feats.data_mut()[i * d..(i + 1) * d];
        let s: f64 = row.iter().sum();
        if s != 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    g.with_features(feats)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || all.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(BgnnError::contract(format!(
                "split ratios {all:?} must lie in [0,1] and sum to at most 1"
            )));
        }
        Ok(())
    }

    fn parts(&self) -> usize {
        [self.train, self.val, self.test].iter().filter(|&&r| r > 0.0).count()
    }

    /// `(train, val, test)` counts for `n` items.
    fn counts(&self, n: usize) -> (usize, usize, usize) {
        let val = (self.val * n as f64 + 1e-9).floor() as usize;
        let test = (self.test * n as f64 + 1e-9).floor() as usize;
        let full = (self.train + self.val + self.test - 1.0).abs() < 1e-9;
        let train = if full {
            n - val - test
        } else {
            ((self.train * n as f64 + 1e-9).floor() as usize).min(n - val - test)
        };
        (train, val, test)
    }
}

/// Seeded (optionally class-stratified) split of `n` items.
///
/// With stratification each class is shuffled and split by the ratios on
/// its own, rounding remainders into train. Classes smaller than the number
/// of non-empty parts are pooled and split without stratification.
pub fn random_split(
    n: usize,
    labels: Option<&[usize]>,
    ratios: SplitRatios,
    seed: u64,
    stratified: bool,
) -> Result<DatasetSplit> {
    ratios.validate()?;
    if let Some(l) = labels {
        if l.len() != n {
            return Err(BgnnError::shape(
                "random_split",
                format!("{} labels for {n} items", l.len()),
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        ratios,
        seed,
    };
    let assign = |items: &mut Vec<usize>, rng: &mut ChaCha8Rng, split: &mut DatasetSplit| {
        items.shuffle(rng);
        let (tr, va, te) = ratios.counts(items.len());
        split.train.extend_from_slice(&items[..tr]);
        split.val.extend_from_slice(&items[tr..tr + va]);
        split.test.extend_from_slice(&items[tr + va..tr + va + te]);
    };
    match (labels, stratified) {
        (Some(labels), true) => {
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &c) in labels.iter().enumerate() {
                by_class.entry(c).or_default().push(i);
            }
            let mut pooled = Vec::new();
            for (class, mut items) in by_class {
                if items.len() < ratios.parts() {
                    log::warn!(
                        "class {class} has {} items for {} split parts; splitting it unstratified",
                        items.len(),
                        ratios.parts()
                    );
                    pooled.append(&mut items);
                } else {
                    assign(&mut items, &mut rng, &mut split);
                }
            }
            if !pooled.is_empty() {
                assign(&mut pooled, &mut rng, &mut split);
            }
        }
        _ => {
            let mut items: Vec<usize> = (0..n).collect();
            assign(&mut items, &mut rng, &mut split);
        }
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Neighborhood size used by GraphSage aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fanout {
    All,
    Max(usize),
}

impl std::str::FromStr for Fanout {
    type Err = BgnnError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Fanout::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Fanout::Max(k)),
            _ => Err(BgnnError::Config(format!("fanout must be `all` or a positive integer, got `{s}`"))),
        }
    }
}

/// Uniform sampling without replacement of `min(degree, fanout)` neighbors
/// per node.
pub fn sample_neighbors_with<R: Rng + ?Sized>(
    neighbors: &[Vec<usize>],
    fanout: Fanout,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    match fanout {
        Fanout::All => neighbors.to_vec(),
        Fanout::Max(k) => neighbors
            .iter()
            .map(|list| {
                if list.len() <= k {
                    list.clone()
                } else {
                    let mut picked: Vec<usize> = list.choose_multiple(rng, k).copied().collect();
                    picked.sort_unstable();
                    picked
                }
            })
            .collect(),
    }
}

pub fn sample_neighbors(g: &Graph, fanout: Fanout, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_neighbors_with(&g.neighbors(), fanout, &mut rng)
}

/// Merges graphs block-diagonally, offsetting node ids cumulatively.
pub fn batch_graphs(graphs: &[Graph], labels: &[usize]) -> Result<GraphBatch> {
    if labels.len() != graphs.len() {
        return Err(BgnnError::shape(
            "batch_graphs",
            format!("{} labels for {} graphs", labels.len(), graphs.len()),
        ));
    }
    let d = graphs.first().map_or(0, Graph::feature_dim);
    if let Some(g) = graphs.iter().find(|g| g.feature_dim() != d) {
        return Err(BgnnError::shape(
            "batch_graphs",
            format!("feature dimension {} differs from {d}", g.feature_dim()),
        ));
    }
    let total: usize = graphs.iter().map(Graph::n_nodes).sum();
    let mut feats = Vec::with_capacity(total * d);
    let mut edges = Vec::new();
    let mut graph_ids = Vec::with_capacity(total);
    let mut node_counts = Vec::with_capacity(graphs.len());
    let all_labelled = graphs.iter().all(|g| g.node_labels().is_some());
    let mut node_labels = Vec::new();
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        feats.extend_from_slice(g.features().data());
        edges.extend(g.edges().iter().map(|&(u, v)| (u + offset, v + offset)));
        graph_ids.extend(std::iter::repeat_n(gi, g.n_nodes()));
        node_counts.push(g.n_nodes());
        if all_labelled {
            node_labels.extend_from_slice(g.node_labels().unwrap_or_default());
        }
        offset += g.n_nodes();
    }
    let mut merged = Graph::from_directed(total, edges, Tensor::matrix(total, d, feats))?;
    if all_labelled && !graphs.is_empty() {
        merged = merged.with_node_labels(node_labels)?;
    }
    Ok(GraphBatch {
        graph: merged,
        graph_ids,
        n_graphs: graphs.len(),
        labels: labels.to_vec(),
        node_counts,
    })
}
