//! Structural entropy of a graph on a coding tree, plus the incremental
//! changes caused by the MERGE and DROP operators.
//!
//! For a tree `T` over graph `G` with total volume `W = 2|E|`,
//!
//! ```text
//! H(G; T) = - sum over non-root nodes v of (g_v / W) * log2(vol(v) / vol(parent(v)))
//! ```
//!
//! where `g_v` is the cut of `v`. Terms with `g_v = 0` or `vol(v) = 0` are zero.

use crate::error::{Error, Result};
use crate::graph::Graph;

use super::{CodingTree, NodeId};

/// One summand of the entropy; zero when the node has no cut or no volume.
pub(crate) fn term(cut: u64, volume: u64, parent_volume: u64, total: f64) -> f64 {
    if cut == 0 || volume == 0 {
        return 0.0;
    }
    -(cut as f64 / total) * (volume as f64 / parent_volume as f64).log2()
}

/// `H(T) - H(T_ab)` for merging root children `a` and `b` under a new node.
///
/// The terms of `a`, `b` and the new node `j` telescope to
/// `(g_a + g_b - g_j) / W * log2(vol(root) / vol(j))`, and
/// `g_a + g_b - g_j = 2 Cut(a, b)`. Only the three terms change: the
/// descendants of `a` and `b` keep their parents.
pub(crate) fn merge_gain(
    (_cut_a, vol_a): (u64, u64),
    (_cut_b, vol_b): (u64, u64),
    cut_ab: u64,
    root_volume: u64,
    total: f64,
) -> f64 {
    let vol_j = vol_a + vol_b;
    if cut_ab == 0 || vol_j == 0 {
        return 0.0;
    }
    2.0 * cut_ab as f64 / total * (root_volume as f64 / vol_j as f64).log2()
}

/// `H(T_m) - H(T)` for dropping `m`, given the sum of its children's cuts.
///
/// Each child's term changes by `-(g_c / W) log2(vol(m) / vol(p))` and the
/// term of `m` itself disappears.
pub(crate) fn drop_cost(cut_m: u64, children_cut: u64, vol_m: u64, vol_parent: u64, total: f64) -> f64 {
    if vol_m == 0 {
        return 0.0;
    }
    let ratio = (vol_m as f64 / vol_parent as f64).log2();
    (cut_m as f64 - children_cut as f64) / total * ratio
}

fn total_volume(graph: &Graph) -> Result<f64> {
    match graph.volume() {
        0 => Err(Error::Domain(
            "structural entropy is undefined on an edgeless graph".into(),
        )),
        w => Ok(w as f64),
    }
}

/// Structural entropy in bits.
pub fn structural_entropy(graph: &Graph, tree: &CodingTree) -> Result<f64> {
    let total = total_volume(graph)?;
    if tree.leaf_count() != graph.node_count() {
        return Err(Error::Structure(format!(
            "tree has {} leaves for {} graph nodes",
            tree.leaf_count(),
            graph.node_count()
        )));
    }
    let mut h = 0.0;
    for (_, node) in tree.iter() {
        let Some(parent) = node.parent else { continue };
        let parent = tree
            .node(parent)
            .ok_or_else(|| Error::Structure(format!("missing parent {parent}")))?;
        h += term(node.cut, node.volume, parent.volume, total);
    }
    Ok(h.max(0.0))
}

/// Number of graph edges with one endpoint under `a` and the other under `b`.
pub fn cut_between(graph: &Graph, tree: &CodingTree, a: NodeId, b: NodeId) -> u64 {
    let mut side = vec![0u8; graph.node_count()];
    for v in tree.leaves_under(a) {
        side[v] = 1;
    }
    for v in tree.leaves_under(b) {
        side[v] = 2;
    }
    graph.edges().iter().filter(|&&(u, v)| side[u] | side[v] == 3).count() as u64
}

pub(crate) fn check_root_pair(tree: &CodingTree, a: NodeId, b: NodeId) -> Result<()> {
    let root = tree.root();
    if a == b {
        return Err(Error::Structure(format!("cannot merge {a} with itself")));
    }
    for x in [a, b] {
        if tree.parent(x) != Some(root) {
            return Err(Error::Structure(format!("{x} is not a child of the root")));
        }
    }
    Ok(())
}

/// Entropy reduction `H(T) - H(T_ab)` if root children `a` and `b` were merged.
pub fn merge_delta(graph: &Graph, tree: &CodingTree, a: NodeId, b: NodeId) -> Result<f64> {
    check_root_pair(tree, a, b)?;
    let total = total_volume(graph)?;
    let na = tree.node(a).unwrap();
    let nb = tree.node(b).unwrap();
    let root_volume = tree.node(tree.root()).unwrap().volume;
    let cut = cut_between(graph, tree, a, b);
    Ok(merge_gain(
        (na.cut, na.volume),
        (nb.cut, nb.volume),
        cut,
        root_volume,
        total,
    ))
}

pub(crate) fn check_droppable(tree: &CodingTree, m: NodeId) -> Result<()> {
    let node = tree
        .node(m)
        .ok_or_else(|| Error::Structure(format!("{m} is not in the tree")))?;
    if m == tree.root() {
        return Err(Error::Structure("the root cannot be dropped".into()));
    }
    if node.is_leaf() {
        return Err(Error::Structure(format!("{m} is a leaf and cannot be dropped")));
    }
    Ok(())
}

/// Entropy change `H(T_m) - H(T)` if internal node `m` were dropped.
pub fn drop_delta(graph: &Graph, tree: &CodingTree, m: NodeId) -> Result<f64> {
    check_droppable(tree, m)?;
    let total = total_volume(graph)?;
    let node = tree.node(m).unwrap();
    let parent = tree.node(node.parent.unwrap()).unwrap();
    let children_cut = node.children.iter().map(|&c| tree.node(c).unwrap().cut).sum();
    Ok(drop_cost(node.cut, children_cut, node.volume, parent.volume, total))
}
