//! Undirected simple graphs and collections of them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

/// An undirected simple graph with a node feature matrix.
///
/// Edges are stored once per unordered pair with `u < v`, sorted. Degrees are
/// derived from the edge list on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    features: DenseMatrix,
    degrees: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
}

/// Counts of input defects that were repaired while building a [`Graph`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cleanup {
    pub self_loops: usize,
    pub duplicates: usize,
}

impl Cleanup {
    pub fn is_clean(&self) -> bool {
        self.self_loops == 0 && self.duplicates == 0
    }
}

impl Graph {
    /// Builds a graph, failing on self-loops, duplicate edges or out-of-range endpoints.
    pub fn new(node_count: usize, edges: Vec<(usize, usize)>, features: DenseMatrix) -> Result<Self> {
        let (graph, cleanup) = Self::from_raw_edges(node_count, edges, features)?;
        if !cleanup.is_clean() {
            return Err(Error::Format(format!(
                "graph has {} self-loops and {} duplicate edges",
                cleanup.self_loops, cleanup.duplicates
            )));
        }
        Ok(graph)
    }

    /// Builds a graph from an arbitrary edge list, dropping self-loops and
    /// collapsing multi-edges. Endpoints must still be in range.
    pub fn from_raw_edges(
        node_count: usize,
        edges: Vec<(usize, usize)>,
        features: DenseMatrix,
    ) -> Result<(Self, Cleanup)> {
        if features.rows() != node_count {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                node_count
            )));
        }
        let mut cleanup = Cleanup::default();
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::Format(format!(
                    "edge ({u}, {v}) references a node outside [0, {node_count})"
                )));
            }
            if u == v {
                cleanup.self_loops += 1;
                continue;
            }
            if !set.insert((u.min(v), u.max(v))) {
                cleanup.duplicates += 1;
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut degrees = vec![0; node_count];
        let mut adjacency = vec![Vec::new(); node_count];
        for &(u, v) in &edges {
            degrees[u] += 1;
            degrees[v] += 1;
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        Ok((
            Self {
                node_count,
                edges,
                features,
                degrees,
                adjacency,
            },
            cleanup,
        ))
    }

    /// A graph whose features are a single all-ones column.
    pub fn with_unit_features(node_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::new(node_count, edges, DenseMatrix::filled(node_count, 1, 1.0))
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn degree(&self, v: usize) -> usize {
        self.degrees[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    /// Sum of degrees, `2 |E|`.
    pub fn volume(&self) -> usize {
        2 * self.edges.len()
    }

    pub fn isolated_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.degrees.iter().enumerate().filter(|(_, &d)| d == 0).map(|(v, _)| v)
    }

    pub fn is_connected(&self) -> bool {
        if self.node_count == 0 {
            return true;
        }
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &u in &self.adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == self.node_count
    }

    /// Same structure with a different feature matrix.
    pub fn with_features(&self, features: DenseMatrix) -> Result<Self> {
        if features.rows() != self.node_count {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                self.node_count
            )));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.node_count {
            return Err(Error::Shape("permutation length differs from node count".into()));
        }
        let mut features = DenseMatrix::zeros(self.node_count, self.feature_dim());
        for v in 0..self.node_count {
            features.row_mut(perm[v]).copy_from_slice(self.features.row(v));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Self::new(self.node_count, edges, features)
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            n: self.node_count,
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
            features: (0..self.node_count).map(|v| self.features.row(v).to_vec()).collect(),
        }
    }

    pub fn from_json(json: &GraphJson) -> Result<Self> {
        let dim = json.features.first().map_or(1, Vec::len);
        let features = if json.features.is_empty() {
            DenseMatrix::filled(json.n, 1, 1.0)
        } else {
            if json.features.iter().any(|row| row.len() != dim) {
                return Err(Error::Format("ragged feature rows".into()));
            }
            DenseMatrix::from_vec(json.features.len(), dim, json.features.concat())?
        };
        Self::new(json.n, json.edges.iter().map(|e| (e[0], e[1])).collect(), features)
    }
}

/// JSON interchange form: `{"n": int, "edges": [[u,v],...], "features": [[...],...]}`.
///
/// An empty `features` list means all-ones unit features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default)]
    pub features: Vec<Vec<f64>>,
}

/// A named list of graphs with optional per-graph class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphCollection {
    graphs: Vec<Graph>,
    labels: Option<Vec<i64>>,
    provenance: String,
}

impl GraphCollection {
    pub fn new(graphs: Vec<Graph>, labels: Option<Vec<i64>>, provenance: impl Into<String>) -> Result<Self> {
        if let Some(labels) = &labels {
            if labels.len() != graphs.len() {
                return Err(Error::Format(format!(
                    "{} labels for {} graphs",
                    labels.len(),
                    graphs.len()
                )));
            }
        }
        Ok(Self {
            graphs,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Subset by index, keeping labels aligned.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            provenance: self.provenance.clone(),
        }
    }

    pub fn average_node_count(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs.iter().map(Graph::node_count).sum::<usize>() as f64 / self.graphs.len() as f64
    }

    /// Largest feature width across graphs.
    pub fn feature_dim(&self) -> usize {
        self.graphs.iter().map(Graph::feature_dim).max().unwrap_or(0)
    }

    /// Zero-pads every graph's features to width `dim`.
    pub fn pad_features(&self, dim: usize) -> Result<Self> {
        let mut graphs = Vec::with_capacity(self.graphs.len());
        for g in &self.graphs {
            if g.feature_dim() > dim {
                return Err(Error::Shape(format!(
                    "cannot pad features of width {} to {dim}",
                    g.feature_dim()
                )));
            }
            let mut f = DenseMatrix::zeros(g.node_count(), dim);
            for v in 0..g.node_count() {
                f.row_mut(v)[..g.feature_dim()].copy_from_slice(g.features().row(v));
            }
            graphs.push(g.with_features(f)?);
        }
        Ok(Self {
            graphs,
            labels: self.labels.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// Concatenates collections; labels are kept only if every part has them.
    pub fn concat(parts: &[&GraphCollection], provenance: impl Into<String>) -> Self {
        let graphs = parts.iter().flat_map(|c| c.graphs.iter().cloned()).collect();
        let labels = parts
            .iter()
            .map(|c| c.labels.clone())
            .collect::<Option<Vec<_>>>()
            .map(|ls| ls.concat());
        Self {
            graphs,
            labels,
            provenance: provenance.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degrees_follow_edges() {
        let g = Graph::with_unit_features(4, vec![(0, 1), (1, 2), (2, 0), (2, 3)]).unwrap();
        assert_eq!(g.degrees(), &[2, 2, 3, 1]);
        assert_eq!(g.volume(), 8);
        assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.edge_count());
    }

    #[test]
    fn strict_constructor_rejects_defects() {
        assert!(Graph::with_unit_features(2, vec![(0, 0)]).is_err());
        assert!(Graph::with_unit_features(2, vec![(0, 1), (1, 0)]).is_err());
        assert!(Graph::with_unit_features(2, vec![(0, 2)]).is_err());
    }

    #[test]
    fn raw_constructor_counts_repairs() {
        let f = DenseMatrix::filled(3, 1, 1.0);
        let (g, c) = Graph::from_raw_edges(3, vec![(0, 1), (1, 0), (2, 2), (1, 2)], f).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(
            c,
            Cleanup {
                self_loops: 1,
                duplicates: 1
            }
        );
    }

    #[test]
    fn json_round_trip() {
        let g = Graph::with_unit_features(3, vec![(0, 1), (1, 2)]).unwrap();
        let text = serde_json::to_string(&g.to_json()).unwrap();
        let back = Graph::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn labels_must_align() {
        let g = Graph::with_unit_features(1, vec![]).unwrap();
        assert!(GraphCollection::new(vec![g.clone()], Some(vec![0, 1]), "x").is_err());
        assert!(GraphCollection::new(vec![g], Some(vec![0]), "x").is_ok());
    }
}
