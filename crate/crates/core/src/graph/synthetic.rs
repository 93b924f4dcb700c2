//! Seeded synthetic datasets for tests and fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{random_split, Graph, SplitMasks, SplitRatios};
use crate::error::{BgnnError, Result};
use crate::tensor::Tensor;

/// Stochastic block model for node classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmConfig {
    pub n_per_block: usize,
    pub n_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// At least `n_blocks`; the first `n_blocks` columns carry the label.
    pub feature_dim: usize,
    /// Weight of the one-hot label in the features.
    #[serde(default = "one")]
    pub signal: f64,
    /// Standard deviation of the Gaussian noise added to every feature.
    pub noise: f64,
    #[serde(default)]
    pub ratios: SplitRatios,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SbmConfig {
    /// Small, easy two-block instance.
    pub fn small(seed: u64) -> Self {
        Self {
            n_per_block: 50,
            n_blocks: 2,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 8,
            signal: 1.0,
            noise: 0.5,
            ratios: SplitRatios::default(),
            seed,
        }
    }

    /// The 600-node, three-block benchmark used for the distillation
    /// checks: sparse, noisy features and a 20% training split.
    pub fn fixture() -> Self {
        Self {
            n_per_block: 200,
            n_blocks: 3,
            p_in: 0.06,
            p_out: 0.02,
            feature_dim: 8,
            signal: 1.0,
            noise: 3.0,
            ratios: SplitRatios {
                train: 0.2,
                val: 0.2,
                test: 0.5,
            },
            seed: 600,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(BgnnError::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.n_blocks == 0 || self.n_per_block == 0 {
            return Err(BgnnError::Config("SBM needs at least one non-empty block".into()));
        }
        if self.feature_dim < self.n_blocks {
            return Err(BgnnError::Config(format!(
                "feature_dim {} is smaller than n_blocks {}",
                self.feature_dim, self.n_blocks
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(BgnnError::Config(format!("noise {} must be finite and >= 0", self.noise)));
        }
        Ok(())
    }
}

/// Samples an SBM graph. Node `i` belongs to block `i / n_per_block`;
/// labels, features, and a stratified split all derive from `seed`.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.n_per_block * cfg.n_blocks;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<usize> = (0..n).map(|i| i / cfg.n_per_block).collect();
    let mut pairs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { cfg.p_in } else { cfg.p_out };
            if rng.gen_bool(p) {
                pairs.push((u, v));
            }
        }
    }
    let mut feats = Tensor::zeros(n, cfg.feature_dim);
    let normal = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("validated noise");
    for i in 0..n {
        for j in 0..cfg.feature_dim {
            let mut v = if cfg.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            if j == labels[i] {
                v += cfg.signal;
            }
            feats.set(i, j, v);
        }
    }
    let split = random_split(n, Some(&labels), cfg.ratios, cfg.seed, true)?;
    let masks = SplitMasks::from_indices(n, &split)?;
    Graph::from_undirected(n, &pairs, feats)?
        .with_node_labels(labels)?
        .with_masks(masks)
}

/// A graph-classification set: class `c` graphs are made of `c + 1` dense
/// communities, and node categories lean toward the class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSetConfig {
    pub n_graphs: usize,
    pub n_classes: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Width of the one-hot node-category features; at least `n_classes`.
    pub feature_dim: usize,
    /// Probability that a node's category equals its graph's class.
    pub signal: f64,
    pub seed: u64,
}

impl GraphSetConfig {
    pub fn small(seed: u64) -> Self {
        Self {
            n_graphs: 60,
            n_classes: 3,
            min_nodes: 6,
            max_nodes: 14,
            feature_dim: 4,
            signal: 0.4,
            seed,
        }
    }
}

/// Returns graphs (with `graph_label` and node categories set) and their labels.
pub fn generate_graph_classification(cfg: &GraphSetConfig) -> Result<(Vec<Graph>, Vec<usize>)> {
    if cfg.n_classes == 0 || cfg.min_nodes == 0 || cfg.min_nodes > cfg.max_nodes {
        return Err(BgnnError::Config("graph set needs classes and 1 <= min_nodes <= max_nodes".into()));
    }
    if cfg.feature_dim < cfg.n_classes || !(0.0..=1.0).contains(&cfg.signal) {
        return Err(BgnnError::Config("feature_dim must cover the classes and signal must be a probability".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut graphs = Vec::with_capacity(cfg.n_graphs);
    let mut labels = Vec::with_capacity(cfg.n_graphs);
    for gi in 0..cfg.n_graphs {
        let class = gi % cfg.n_classes;
        let n = rng.gen_range(cfg.min_nodes..=cfg.max_nodes);
        let blocks = class + 1;
        let block: Vec<usize> = (0..n).map(|i| i * blocks / n).collect();
        let mut pairs = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                let p = if block[u] == block[v] { 0.6 } else { 0.05 };
                if rng.gen_bool(p) {
                    pairs.push((u, v));
                }
            }
        }
        let mut feats = Tensor::zeros(n, cfg.feature_dim);
        let mut cats = Vec::with_capacity(n);
        for i in 0..n {
            let cat = if rng.gen_bool(cfg.signal) {
                class
            } else {
                rng.gen_range(0..cfg.feature_dim)
            };
            feats.set(i, cat, 1.0);
            cats.push(cat);
        }
        // Categories double as node labels so the set survives a TU round trip.
        graphs.push(
            Graph::from_undirected(n, &pairs, feats)?
                .with_node_labels(cats)?
                .with_graph_label(class),
        );
        labels.push(class);
    }
    Ok((graphs, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_limit_gives_cliques() {
        let cfg = SbmConfig {
            n_per_block: 3,
            n_blocks: 2,
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 2,
            signal: 1.0,
            noise: 0.0,
            ratios: SplitRatios {
                train: 1.0,
                val: 0.0,
                test: 0.0,
            },
            seed: 3,
        };
        let g = generate_sbm(&cfg).unwrap();
        assert_eq!(g.n_undirected_edges(), 6);
        assert!(g.edges().iter().all(|&(u, v)| u / 3 == v / 3));
        assert_eq!(g.features().row(4), &[0.0, 1.0]);
    }

    #[test]
    fn equal_probabilities_give_block_independent_density() {
        let cfg = SbmConfig {
            n_per_block: 100,
            n_blocks: 2,
            p_in: 0.3,
            p_out: 0.3,
            feature_dim: 2,
            signal: 1.0,
            noise: 0.1,
            ratios: SplitRatios::default(),
            seed: 11,
        };
        let g = generate_sbm(&cfg).unwrap();
        let (mut within, mut across) = (0usize, 0usize);
        for &(u, v) in g.edges() {
            if u < v {
                if u / 100 == v / 100 {
                    within += 1;
                } else {
                    across += 1;
                }
            }
        }
        let within_density = within as f64 / (2.0 * 100.0 * 99.0 / 2.0);
        let across_density = across as f64 / (100.0 * 100.0);
        assert!((within_density - across_density).abs() < 0.02, "{within_density} vs {across_density}");
    }

    #[test]
    fn same_seed_same_graph() {
        let a = generate_sbm(&SbmConfig::small(5)).unwrap();
        let b = generate_sbm(&SbmConfig::small(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_sbm(&SbmConfig::small(6)).unwrap());
    }

    #[test]
    fn invalid_probability_is_rejected() {
        let mut cfg = SbmConfig::small(0);
        cfg.p_in = 1.5;
        assert!(generate_sbm(&cfg).is_err());
    }

    #[test]
    fn graph_set_is_labelled_and_deterministic() {
        let (graphs, labels) = generate_graph_classification(&GraphSetConfig::small(2)).unwrap();
        assert_eq!(graphs.len(), 60);
        assert!(graphs.iter().zip(&labels).all(|(g, &l)| g.graph_label() == Some(l)));
        let again = generate_graph_classification(&GraphSetConfig::small(2)).unwrap();
        assert_eq!(again.0, graphs);
    }
}
