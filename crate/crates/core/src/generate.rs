//! Synthetic graph generators.

use std::collections::HashSet;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphCollection};

/// Erdős–Rényi style graph with exactly `2 * node_count` distinct edges and
/// unit features, sampled uniformly among simple graphs of that size.
pub fn generate_er_graph(node_count: usize, seed: u64) -> Result<Graph> {
    if node_count < 3 {
        return Err(Error::Parameter(format!("node_count {node_count} < 3")));
    }
    let target = 2 * node_count;
    if node_count * (node_count - 1) / 2 < target {
        return Err(Error::Parameter(format!(
            "{node_count} nodes cannot host {target} distinct edges"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(target);
    let mut edges = Vec::with_capacity(target);
    while edges.len() < target {
        let u = rng.gen_range(0..node_count);
        let v = rng.gen_range(0..node_count);
        if u == v {
            continue;
        }
        let e = (u.min(v), u.max(v));
        if seen.insert(e) {
            edges.push(e);
        }
    }
    Graph::with_unit_features(node_count, edges)
}

/// Uniform random labelled tree on `node_count` nodes (Prüfer decoding).
pub fn random_tree<R: Rng>(node_count: usize, rng: &mut R) -> Result<Graph> {
    if node_count < 2 {
        return Err(Error::Parameter("a tree needs at least 2 nodes".into()));
    }
    if node_count == 2 {
        return Graph::with_unit_features(2, vec![(0, 1)]);
    }
    let prufer: Vec<usize> = (0..node_count - 2).map(|_| rng.gen_range(0..node_count)).collect();
    let mut degree = vec![1usize; node_count];
    for &p in &prufer {
        degree[p] += 1;
    }
    let mut edges = Vec::with_capacity(node_count - 1);
    for &p in &prufer {
        let leaf = (0..node_count).find(|&v| degree[v] == 1).unwrap();
        edges.push((leaf, p));
        degree[leaf] -= 1;
        degree[p] -= 1;
    }
    let rest: Vec<usize> = (0..node_count).filter(|&v| degree[v] == 1).collect();
    edges.push((rest[0], rest[1]));
    Graph::with_unit_features(node_count, edges)
}

/// Random graph containing exactly `ceil(density * n(n-1)/2)` edges.
pub fn random_dense_graph<R: Rng>(node_count: usize, density: f64, rng: &mut R) -> Result<Graph> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Parameter(format!("density {density} outside [0, 1]")));
    }
    let mut pairs: Vec<(usize, usize)> = (0..node_count)
        .flat_map(|u| (u + 1..node_count).map(move |v| (u, v)))
        .collect();
    let keep = (density * pairs.len() as f64).ceil() as usize;
    pairs.shuffle(rng);
    pairs.truncate(keep);
    Graph::with_unit_features(node_count, pairs)
}

/// `count` random trees and `count` random graphs of edge density `density`,
/// node counts drawn uniformly from `sizes`.
pub fn trees_and_dense<R: Rng>(
    count: usize,
    sizes: RangeInclusive<usize>,
    density: f64,
    rng: &mut R,
) -> Result<(GraphCollection, GraphCollection)> {
    let trees = (0..count)
        .map(|_| random_tree(rng.gen_range(sizes.clone()), rng))
        .collect::<Result<Vec<_>>>()?;
    let dense = (0..count)
        .map(|_| random_dense_graph(rng.gen_range(sizes.clone()), density, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        GraphCollection::new(trees, None, "random trees")?,
        GraphCollection::new(dense, None, "random dense graphs")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_has_exact_edge_count() {
        let g = generate_er_graph(1000, 7).unwrap();
        assert_eq!(g.node_count(), 1000);
        assert_eq!(g.edge_count(), 2000);
        assert_eq!(g.feature_dim(), 1);
    }

    #[test]
    fn er_is_deterministic() {
        assert_eq!(generate_er_graph(6, 1).unwrap(), generate_er_graph(6, 1).unwrap());
        let other = generate_er_graph(6, 2).unwrap();
        assert_eq!(other.edge_count(), 12);
    }

    #[test]
    fn er_rejects_small_sizes() {
        assert!(generate_er_graph(2, 0).is_err());
        assert!(generate_er_graph(4, 0).is_err());
        assert!(generate_er_graph(5, 0).is_ok());
    }

    #[test]
    fn trees_and_dense_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..15 {
            let t = random_tree(n, &mut rng).unwrap();
            assert_eq!(t.edge_count(), n - 1);
            assert!(t.is_connected());
        }
        let d = random_dense_graph(12, 0.6, &mut rng).unwrap();
        assert!(d.edge_count() as f64 >= 0.6 * 66.0);
    }
}
