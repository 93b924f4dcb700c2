//! Dataset specs: synthetic generators, JSON bundles and TU directories.

use std::path::{Path, PathBuf};

use bgnn::graph::{
    generate_graph_classification, generate_sbm, load_json_bundle, load_tu_dataset, one_hot_degree_features,
    row_normalize_features, Graph, GraphSetConfig, SbmConfig, SplitRatios,
};
use bgnn::pipeline::{Dataset, GraphData, NodeData};

use crate::CliError;

pub const DATA_DIR_ENV: &str = "BGNN_DATA_DIR";

/// A loaded dataset. Graph-task splits depend on the run seed, so those are
/// materialized per seed.
#[derive(Clone, Debug)]
pub enum Source {
    Node(Box<Dataset>),
    Graphs {
        graphs: Vec<Graph>,
        labels: Vec<usize>,
        n_classes: usize,
    },
}

impl Source {
    pub fn for_seed(&self, seed: u64) -> bgnn::Result<Dataset> {
        match self {
            Source::Node(d) => Ok((**d).clone()),
            Source::Graphs {
                graphs,
                labels,
                n_classes,
            } => Ok(Dataset::Graph(GraphData::new(
                graphs.clone(),
                labels.clone(),
                *n_classes,
                SplitRatios::default(),
                seed,
            )?)),
        }
    }
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

/// `path` as given if it exists, else under `BGNN_DATA_DIR`.
fn locate(path: &str) -> Result<PathBuf, CliError> {
    let p = PathBuf::from(path);
    if p.exists() {
        return Ok(p);
    }
    if p.is_relative() {
        if let Some(root) = data_dir() {
            let q = root.join(&p);
            if q.exists() {
                return Ok(q);
            }
        }
    }
    Err(CliError::Usage(format!(
        "dataset path `{path}` not found (also looked under ${DATA_DIR_ENV})"
    )))
}

fn bundle(path: &Path) -> Result<Source, CliError> {
    let mut g = load_json_bundle(path).map_err(|e| CliError::Usage(e.to_string()))?;
    // bag-of-words style features (all non-negative) are row-normalized
    if g.features().data().iter().all(|v| *v >= 0.0) {
        g = row_normalize_features(g).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let d = NodeData::new(g).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(Source::Node(Box::new(Dataset::Node(d))))
}

fn tu(dir: &Path, name: &str) -> Result<Source, CliError> {
    let ds = load_tu_dataset(dir, name).map_err(|e| CliError::Usage(e.to_string()))?;
    // graphs without node labels get one-hot degree features
    let graphs = if ds.graphs.iter().all(|g| g.feature_dim() == 0) {
        one_hot_degree_features(&ds.graphs, Some(64)).map_err(|e| CliError::Usage(e.to_string()))?
    } else {
        ds.graphs
    };
    Ok(Source::Graphs {
        graphs,
        labels: ds.labels,
        n_classes: ds.n_classes,
    })
}

fn sbm(cfg: &SbmConfig) -> Result<Source, CliError> {
    let g = generate_sbm(cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let d = NodeData::new(g).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Source::Node(Box::new(Dataset::Node(d))))
}

pub fn load(spec: &str) -> Result<Source, CliError> {
    let (kind, rest) = spec.split_once(':').unwrap_or(("", spec));
    match kind {
        "sbm" => match rest {
            "small" => sbm(&SbmConfig::small(0)),
            "fixture" => sbm(&SbmConfig::fixture()),
            path => {
                let p = locate(path)?;
                let text = std::fs::read_to_string(&p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                let cfg: SbmConfig =
                    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                sbm(&cfg)
            }
        },
        "graphs" => match rest {
            "small" => {
                let cfg = GraphSetConfig::small(0);
                let (graphs, labels) = generate_graph_classification(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
                Ok(Source::Graphs {
                    graphs,
                    labels,
                    n_classes: cfg.n_classes,
                })
            }
            other => Err(CliError::Usage(format!("unknown graph set `{other}` (small)"))),
        },
        "json" => bundle(&locate(rest)?),
        "tu" => {
            let p = PathBuf::from(rest);
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .ok_or_else(|| CliError::Usage(format!("tu spec `{rest}` needs DIR/NAME")))?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            let dir = locate(if dir.as_os_str().is_empty() { "." } else { dir.to_str().unwrap_or(".") })?;
            tu(&dir, &name)
        }
        "" if rest.ends_with(".json") => bundle(&locate(rest)?),
        "" => {
            // a bare name: `<name>.json` bundle or `<name>/` TU directory
            let json = format!("{rest}.json");
            if let Ok(p) = locate(&json) {
                return bundle(&p);
            }
            if let Ok(dir) = locate(rest) {
                if dir.join(format!("{rest}_A.txt")).exists() {
                    return tu(&dir, rest);
                }
            }
            Err(CliError::Usage(format!(
                "dataset `{rest}` not found: expected {json} or a TU directory {rest}/, here or under ${DATA_DIR_ENV}"
            )))
        }
        other => Err(CliError::Usage(format!(
            "unknown dataset kind `{other}` (sbm, graphs, json, tu)"
        ))),
    }
}
