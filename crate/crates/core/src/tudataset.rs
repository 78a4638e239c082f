//! Reader and writer for the TUDataset flat-file layout.
//!
//! A dataset `DS` is a directory holding:
//!
//! * `DS_A.txt` - one `row, col` pair per line, 1-based global node ids
//! * `DS_graph_indicator.txt` - line `i` holds the 1-based graph id of node `i`
//! * `DS_node_labels.txt` (optional) - one integer label per node
//! * `DS_node_attributes.txt` (optional) - comma separated floats per node
//! * `DS_graph_labels.txt` (optional) - one integer label per graph
//!
//! Node attributes take precedence over node labels; labels are one-hot
//! encoded over the sorted set of labels seen in the whole dataset. With
//! neither file present every node gets a single constant feature.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphCollection};
use crate::nn::DenseMatrix;

/// Finds the dataset prefix `DS` from the `DS_A.txt` file in `dir`.
fn dataset_name(dir: &Path) -> Result<String> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Load {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter_map(|f| f.strip_suffix("_A.txt").map(str::to_owned))
        .collect();
    names.sort();
    names.into_iter().next().ok_or_else(|| Error::Load {
        path: dir.join("*_A.txt"),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no edge list file"),
    })
}

fn read_required(path: PathBuf) -> Result<String> {
    fs::read_to_string(&path).map_err(|source| Error::Load { path, source })
}

fn read_optional(path: PathBuf) -> Result<Option<String>> {
    match fs::read_to_string(&path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(Error::Load { path, source }),
    }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_int(field: &str, file: &str, line: usize) -> Result<i64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{file}:{line}: expected an integer, found {field:?}")))
}

fn parse_float(field: &str, file: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{file}:{line}: expected a number, found {field:?}")))
}

/// Loads a TUDataset directory into a [`GraphCollection`].
pub fn parse_tud_dataset(dir: impl AsRef<Path>) -> Result<GraphCollection> {
    let dir = dir.as_ref();
    let name = dataset_name(dir)?;
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let indicator_text = read_required(file("graph_indicator"))?;
    let edge_text = read_required(file("A"))?;

    let mut indicator = Vec::new();
    for (line, l) in lines(&indicator_text) {
        let gid = parse_int(l, "graph_indicator", line)?;
        if gid < 1 {
            return Err(Error::Format(format!("graph_indicator:{line}: graph id {gid} < 1")));
        }
        indicator.push(gid as usize - 1);
    }
    let graph_count = indicator.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; graph_count];
    let mut local_id = vec![0usize; indicator.len()];
    for (node, &g) in indicator.iter().enumerate() {
        local_id[node] = sizes[g];
        sizes[g] += 1;
    }
    if let Some(gap) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Format(format!(
            "graph_indicator: graph id {} has no nodes",
            gap + 1
        )));
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    for (line, l) in lines(&edge_text) {
        let mut parts = l.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format(format!("A:{line}: expected `row, col`")));
        };
        let a = parse_int(a, "A", line)?;
        let b = parse_int(b, "A", line)?;
        let node = |x: i64| -> Result<usize> {
            if x < 1 || x as usize > indicator.len() {
                Err(Error::Format(format!("A:{line}: unknown node {x}")))
            } else {
                Ok(x as usize - 1)
            }
        };
        let (a, b) = (node(a)?, node(b)?);
        if indicator[a] != indicator[b] {
            return Err(Error::Format(format!(
                "A:{line}: edge joins nodes of graphs {} and {}",
                indicator[a] + 1,
                indicator[b] + 1
            )));
        }
        edges[indicator[a]].push((local_id[a], local_id[b]));
    }

    let features = node_features(&file, indicator.len())?;

    let mut per_graph: Vec<Vec<&[f64]>> = vec![Vec::new(); graph_count];
    for (node, &g) in indicator.iter().enumerate() {
        per_graph[g].push(features.row(node));
    }

    let mut graphs = Vec::with_capacity(graph_count);
    let mut self_loops = 0;
    for (g, (rows, edges)) in per_graph.into_iter().zip(edges).enumerate() {
        let x = DenseMatrix::vstack(&rows)?;
        let (graph, cleanup) = Graph::from_raw_edges(sizes[g], edges, x)?;
        self_loops += cleanup.self_loops;
        graphs.push(graph);
    }
    if self_loops > 0 {
        warn!("{name}: dropped {self_loops} self-loops");
    }

    let labels = match read_optional(file("graph_labels"))? {
        Some(text) => {
            let labels = lines(&text)
                .map(|(line, l)| parse_int(l, "graph_labels", line))
                .collect::<Result<Vec<_>>>()?;
            Some(labels)
        }
        None => None,
    };
    debug!("{name}: loaded {graph_count} graphs");
    GraphCollection::new(graphs, labels, name)
}

fn node_features(file: &dyn Fn(&str) -> PathBuf, node_count: usize) -> Result<DenseMatrix> {
    if let Some(text) = read_optional(file("node_attributes"))? {
        let rows = lines(&text)
            .map(|(line, l)| {
                l.split(',')
                    .map(|f| parse_float(f, "node_attributes", line))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.len() != node_count {
            return Err(Error::Format(format!(
                "node_attributes has {} rows for {node_count} nodes",
                rows.len()
            )));
        }
        return DenseMatrix::from_rows(&rows).map_err(|_| Error::Format("ragged node_attributes".into()));
    }
    if let Some(text) = read_optional(file("node_labels"))? {
        let labels = lines(&text)
            .map(|(line, l)| parse_int(l.split(',').next().unwrap_or(l), "node_labels", line))
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != node_count {
            return Err(Error::Format(format!(
                "node_labels has {} rows for {node_count} nodes",
                labels.len()
            )));
        }
        let mut index = BTreeMap::new();
        for &l in &labels {
            index.entry(l).or_insert(0);
        }
        for (i, slot) in index.values_mut().enumerate() {
            *slot = i;
        }
        let mut x = DenseMatrix::zeros(node_count, index.len());
        for (v, l) in labels.iter().enumerate() {
            x[(v, index[l])] = 1.0;
        }
        return Ok(x);
    }
    Ok(DenseMatrix::filled(node_count, 1, 1.0))
}

/// Writes a collection in TUDataset layout as `dir/name_*.txt`.
///
/// Features are always written as `node_attributes`, edges in both directions.
pub fn write_tud_dataset(collection: &GraphCollection, dir: impl AsRef<Path>, name: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut a = String::new();
    let mut indicator = String::new();
    let mut attributes = String::new();
    let mut offset = 0;
    for (g, graph) in collection.graphs().iter().enumerate() {
        for v in 0..graph.node_count() {
            writeln!(indicator, "{}", g + 1).unwrap();
            let row: Vec<String> = graph.features().row(v).iter().map(f64::to_string).collect();
            writeln!(attributes, "{}", row.join(", ")).unwrap();
        }
        for &(u, v) in graph.edges() {
            writeln!(a, "{}, {}", offset + u + 1, offset + v + 1).unwrap();
            writeln!(a, "{}, {}", offset + v + 1, offset + u + 1).unwrap();
        }
        offset += graph.node_count();
    }
    fs::write(dir.join(format!("{name}_A.txt")), a)?;
    fs::write(dir.join(format!("{name}_graph_indicator.txt")), indicator)?;
    fs::write(dir.join(format!("{name}_node_attributes.txt")), attributes)?;
    if let Some(labels) = collection.labels() {
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        fs::write(dir.join(format!("{name}_graph_labels.txt")), text)?;
    }
    Ok(())
}
