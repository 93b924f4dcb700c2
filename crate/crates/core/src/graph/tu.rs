//! Plain-text TU graph-classification format.
//!
//! A dataset `NAME` lives in one directory:
//!
//! - `NAME_A.txt`: one `u, v` edge per line, 1-indexed global node ids
//! - `NAME_graph_indicator.txt`: line `i` holds the 1-indexed graph of node `i`
//! - `NAME_graph_labels.txt`: one integer class per graph
//! - `NAME_node_labels.txt` (optional): one integer category per node

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::Graph;
use crate::error::{BgnnError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TuDataset {
    pub name: String,
    /// Graphs with node ids renumbered from zero and `graph_label` set.
    pub graphs: Vec<Graph>,
    /// Graph labels remapped to `0..n_classes`.
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Original label value for each remapped class.
    pub label_values: Vec<i64>,
    /// Original node-label value for each one-hot feature column.
    pub node_label_values: Vec<i64>,
}

fn file_path(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

/// `(line number, trimmed content)` of every non-blank line.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| BgnnError::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn parse_int(path: &Path, line: usize, s: &str) -> Result<i64> {
    s.trim()
        .parse::<i64>()
        .map_err(|_| BgnnError::format(path, Some(line), format!("expected an integer, got `{s}`")))
}

pub fn load_tu_dataset(dir: impl AsRef<Path>, name: &str) -> Result<TuDataset> {
    let dir = dir.as_ref();
    let a_path = file_path(dir, name, "A");
    let ind_path = file_path(dir, name, "graph_indicator");
    let gl_path = file_path(dir, name, "graph_labels");
    let nl_path = file_path(dir, name, "node_labels");

    let graph_label_lines = read_lines(&gl_path)?;
    let raw_labels = graph_label_lines
        .iter()
        .map(|(ln, s)| parse_int(&gl_path, *ln, s))
        .collect::<Result<Vec<_>>>()?;
    let n_graphs = raw_labels.len();

    let indicator_lines = read_lines(&ind_path)?;
    let mut graph_of = Vec::with_capacity(indicator_lines.len());
    for (ln, s) in &indicator_lines {
        let g = parse_int(&ind_path, *ln, s)?;
        if g < 1 || g as usize > n_graphs {
            return Err(BgnnError::format(
                &ind_path,
                Some(*ln),
                format!("graph id {g} outside 1..={n_graphs}"),
            ));
        }
        graph_of.push(g as usize - 1);
    }
    let n_total = graph_of.len();

    let mut counts = vec![0usize; n_graphs];
    let mut local = Vec::with_capacity(n_total);
    for &g in &graph_of {
        local.push(counts[g]);
        counts[g] += 1;
    }

    let edge_lines = read_lines(&a_path)?;
    let mut pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    for (ln, s) in &edge_lines {
        let mut parts = s.split(',');
        let (Some(u), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(BgnnError::format(&a_path, Some(*ln), format!("expected `u, v`, got `{s}`")));
        };
        let (u, v) = (parse_int(&a_path, *ln, u)?, parse_int(&a_path, *ln, v)?);
        for id in [u, v] {
            if id < 1 || id as usize > n_total {
                return Err(BgnnError::format(
                    &a_path,
                    Some(*ln),
                    format!("node {id} outside 1..={n_total}"),
                ));
            }
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        if graph_of[u] != graph_of[v] {
            return Err(BgnnError::format(
                &a_path,
                Some(*ln),
                format!(
                    "edge ({}, {}) joins graphs {} and {}",
                    u + 1,
                    v + 1,
                    graph_of[u] + 1,
                    graph_of[v] + 1
                ),
            ));
        }
        pairs[graph_of[u]].push((local[u], local[v]));
    }

    let (node_cats, node_label_values) = if nl_path.exists() {
        let lines = read_lines(&nl_path)?;
        if lines.len() != n_total {
            return Err(BgnnError::format(
                &nl_path,
                None,
                format!("{} node labels for {n_total} nodes", lines.len()),
            ));
        }
        let raw = lines
            .iter()
            .map(|(ln, s)| parse_int(&nl_path, *ln, s))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<i64> = raw.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let cats = raw
            .iter()
            .map(|v| values.binary_search(v).expect("value collected above"))
            .collect::<Vec<_>>();
        (Some(cats), values)
    } else {
        (None, Vec::new())
    };

    let label_values: Vec<i64> = raw_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|v| label_values.binary_search(v).expect("value collected above"))
        .collect();

    let dim = node_label_values.len();
    let mut per_graph_cats: Vec<Vec<usize>> = vec![Vec::new(); n_graphs];
    if let Some(cats) = &node_cats {
        for (i, &g) in graph_of.iter().enumerate() {
            per_graph_cats[g].push(cats[i]);
        }
    }
    let mut graphs = Vec::with_capacity(n_graphs);
    for g in 0..n_graphs {
        let n = counts[g];
        let mut feats = Tensor::zeros(n, dim);
        if node_cats.is_some() {
            for (i, &c) in per_graph_cats[g].iter().enumerate() {
                feats.set(i, c, 1.0);
            }
        }
        let mut graph = Graph::from_undirected(n, &pairs[g], feats)?.with_graph_label(labels[g]);
        if node_cats.is_some() {
            graph = graph.with_node_labels(std::mem::take(&mut per_graph_cats[g]))?;
        }
        graphs.push(graph);
    }

    Ok(TuDataset {
        name: name.to_string(),
        graphs,
        n_classes: label_values.len(),
        labels,
        label_values,
        node_label_values,
    })
}

/// Writes graphs in TU format. Node labels are written when every graph
/// carries them. Edges are written in both directions.
pub fn write_tu_dataset(dir: impl AsRef<Path>, name: &str, graphs: &[Graph], labels: &[usize]) -> Result<()> {
    let dir = dir.as_ref();
    if labels.len() != graphs.len() {
        return Err(BgnnError::shape(
            "write_tu_dataset",
            format!("{} labels for {} graphs", labels.len(), graphs.len()),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| BgnnError::io(dir, e))?;
    let mut a = String::new();
    let mut ind = String::new();
    let mut gl = String::new();
    let mut nl = String::new();
    let with_node_labels = graphs.iter().all(|g| g.node_labels().is_some());
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        for &(u, v) in g.edges() {
            a.push_str(&format!("{}, {}\n", u + offset + 1, v + offset + 1));
        }
        for _ in 0..g.n_nodes() {
            ind.push_str(&format!("{}\n", gi + 1));
        }
        if with_node_labels {
            for l in g.node_labels().unwrap_or_default() {
                nl.push_str(&format!("{l}\n"));
            }
        }
        gl.push_str(&format!("{}\n", labels[gi]));
        offset += g.n_nodes();
    }
    let mut files = vec![("A", a), ("graph_indicator", ind), ("graph_labels", gl)];
    if with_node_labels {
        files.push(("node_labels", nl));
    }
    for (suffix, body) in files {
        let path = file_path(dir, name, suffix);
        let mut f = fs::File::create(&path).map_err(|e| BgnnError::io(&path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| BgnnError::io(&path, e))?;
    }
    Ok(())
}
