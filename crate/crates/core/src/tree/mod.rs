//! Coding trees: rooted hierarchies whose leaves are the nodes of a graph.
//!
//! Every tree node stands for the set of graph nodes below it and carries two
//! counters used by structural entropy: its `volume` (sum of degrees of the
//! graph nodes below it) and its `cut` (number of graph edges with exactly one
//! endpoint below it).

mod build;
mod entropy;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub use build::{
    apply_drop, apply_merge, build_coding_tree, build_coding_tree_traced, init_flat_tree, BuildTrace, DropStep,
    MergeStep,
};
pub use entropy::{cut_between, drop_delta, merge_delta, structural_entropy};

/// Handle of a node in a [`CodingTree`]. Handles are assigned in creation
/// order and never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub volume: u64,
    pub cut: u64,
    /// Set iff the node is a leaf.
    pub graph_node: Option<usize>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.graph_node.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct CodingTree {
    nodes: Vec<Option<TreeNode>>,
    root: NodeId,
    leaf_of: Vec<NodeId>,
}

/// Trees are equal when they have the same root, leaves and live nodes;
/// handles freed by drops do not matter.
impl PartialEq for CodingTree {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.leaf_of == other.leaf_of && self.iter().eq(other.iter())
    }
}

impl Eq for CodingTree {}

impl CodingTree {
    pub(crate) fn from_parts(nodes: Vec<Option<TreeNode>>, root: NodeId, leaf_of: Vec<NodeId>) -> Self {
        Self { nodes, root, leaf_of }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Option<&mut TreeNode> {
        self.nodes.get_mut(id.0).and_then(Option::as_mut)
    }

    pub(crate) fn push_node(&mut self, node: TreeNode) -> NodeId {
        self.nodes.push(Some(node));
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn remove_node(&mut self, id: NodeId) -> Option<TreeNode> {
        self.nodes.get_mut(id.0).and_then(Option::take)
    }

    /// Leaf handle of graph node `v`.
    pub fn leaf(&self, v: usize) -> NodeId {
        self.leaf_of[v]
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_of.len()
    }

    /// Upper bound (exclusive) on handle values ever issued.
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    /// Live nodes in handle order.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &TreeNode)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|n| (NodeId(i), n)))
    }

    pub fn node_count(&self) -> usize {
        self.iter().count()
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        self.node(id).map_or(&[], |n| &n.children)
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.node(id).and_then(|n| n.parent)
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        self.node_heights()[self.root.0].unwrap_or(0)
    }

    /// For every live node, the length of the longest downward path to a
    /// leaf (leaves are 0). Indexed by handle.
    pub fn node_heights(&self) -> Vec<Option<usize>> {
        let mut heights = vec![None; self.nodes.len()];
        for id in self.post_order() {
            let h = self
                .children(id)
                .iter()
                .map(|c| heights[c.0].unwrap_or(0) + 1)
                .max()
                .unwrap_or(0);
            heights[id.0] = Some(h);
        }
        heights
    }

    /// Nodes reachable from the root, children before parents.
    pub fn post_order(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        let mut seen = HashSet::new();
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                out.push(id);
                continue;
            }
            if !seen.insert(id) {
                continue;
            }
            stack.push((id, true));
            for &c in self.children(id).iter().rev() {
                stack.push((c, false));
            }
        }
        out
    }

    /// Graph nodes under `id`, sorted.
    pub fn leaves_under(&self, id: NodeId) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            match self.node(x) {
                Some(n) if n.is_leaf() => out.push(n.graph_node.unwrap()),
                Some(n) => stack.extend(&n.children),
                None => {}
            }
        }
        out.sort_unstable();
        out
    }

    /// Leaf sets of the root's children, sorted: the top-level communities.
    pub fn top_level_communities(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<_> = self.children(self.root).iter().map(|&c| self.leaves_under(c)).collect();
        groups.sort();
        groups
    }

    pub fn to_json(&self) -> TreeJson {
        TreeJson {
            root: self.root,
            nodes: self
                .iter()
                .map(|(id, n)| TreeNodeJson {
                    id,
                    parent: n.parent,
                    children: n.children.clone(),
                    graph_node: n.graph_node,
                    volume: n.volume,
                    cut: n.cut,
                })
                .collect(),
        }
    }

    /// Rebuilds a tree from JSON. Only handle ranges and the leaf bijection
    /// are checked here; use [`validate_tree`] for the full audit.
    pub fn from_json(json: &TreeJson) -> Result<Self> {
        let capacity = json.nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0);
        let mut nodes: Vec<Option<TreeNode>> = vec![None; capacity];
        let mut leaves = Vec::new();
        for n in &json.nodes {
            if nodes[n.id.0].is_some() {
                return Err(Error::Format(format!("duplicate tree node {}", n.id)));
            }
            if let Some(v) = n.graph_node {
                leaves.push((v, n.id));
            }
            nodes[n.id.0] = Some(TreeNode {
                parent: n.parent,
                children: n.children.clone(),
                volume: n.volume,
                cut: n.cut,
                graph_node: n.graph_node,
            });
        }
        if json.root.0 >= capacity || nodes[json.root.0].is_none() {
            return Err(Error::Format(format!("root {} is not a tree node", json.root)));
        }
        leaves.sort();
        let mut leaf_of = Vec::with_capacity(leaves.len());
        for (i, (v, id)) in leaves.into_iter().enumerate() {
            if v != i {
                return Err(Error::Format(format!("leaf graph nodes are not 0..n (missing {i})")));
            }
            leaf_of.push(id);
        }
        Ok(Self {
            nodes,
            root: json.root,
            leaf_of,
        })
    }
}

/// JSON form: `{"root": id, "nodes": [{"id", "parent", "children", "graph_node", "volume", "cut"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeJson {
    pub root: NodeId,
    pub nodes: Vec<TreeNodeJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNodeJson {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub graph_node: Option<usize>,
    pub volume: u64,
    pub cut: u64,
}

/// Audits `tree` against `graph`, returning every violation found.
pub fn validate_tree(graph: &Graph, tree: &CodingTree) -> Vec<String> {
    let mut issues = Vec::new();
    let root = tree.root();
    let Some(root_node) = tree.node(root) else {
        return vec![format!("root {root} missing")];
    };
    if root_node.parent.is_some() {
        issues.push(format!("root {root} has a parent"));
    }

    // reachability and acyclicity from the root
    let mut visited = vec![false; tree.capacity()];
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if visited[id.0] {
            issues.push(format!("{id} reached twice (cycle or shared child)"));
            continue;
        }
        visited[id.0] = true;
        for &c in tree.children(id) {
            match tree.node(c) {
                None => issues.push(format!("{id} lists missing child {c}")),
                Some(child) if child.parent != Some(id) => {
                    issues.push(format!("{c} is a child of {id} but records parent {:?}", child.parent))
                }
                Some(_) => stack.push(c),
            }
        }
    }
    for (id, n) in tree.iter() {
        if !visited[id.0] {
            issues.push(format!("{id} is not reachable from the root"));
        }
        if let Some(p) = n.parent {
            if !tree.children(p).contains(&id) {
                issues.push(format!("{id} records parent {p} which does not list it"));
            }
        }
        if n.is_leaf() && !n.children.is_empty() {
            issues.push(format!("leaf {id} has children"));
        }
        if !n.is_leaf() && n.children.is_empty() && id != root {
            issues.push(format!("internal node {id} has no children"));
        }
    }

    // leaf bijection
    if tree.leaf_count() != graph.node_count() {
        issues.push(format!(
            "{} leaves for {} graph nodes",
            tree.leaf_count(),
            graph.node_count()
        ));
    }
    let mut owner = vec![None; graph.node_count()];
    for (id, n) in tree.iter() {
        if let Some(v) = n.graph_node {
            if v >= graph.node_count() {
                issues.push(format!("leaf {id} maps to unknown graph node {v}"));
            } else if let Some(prev) = owner[v].replace(id) {
                issues.push(format!("graph node {v} has leaves {prev} and {id}"));
            } else if !visited[id.0] {
                issues.push(format!("leaf {id} of graph node {v} is detached"));
            }
        }
    }
    for (v, o) in owner.iter().enumerate() {
        match o {
            None => issues.push(format!("graph node {v} has no leaf")),
            Some(id) if v < tree.leaf_count() && tree.leaf(v) != *id => {
                issues.push(format!("leaf index of graph node {v} points to {}", tree.leaf(v)))
            }
            _ => {}
        }
    }
    if !issues.is_empty() {
        return issues;
    }

    // counters against a from-scratch recount
    let mut under = vec![usize::MAX; graph.node_count()];
    for id in tree.post_order() {
        let n = tree.node(id).unwrap();
        let expected_volume: u64 = match n.graph_node {
            Some(v) => graph.degree(v) as u64,
            None => n.children.iter().map(|c| tree.node(*c).unwrap().volume).sum(),
        };
        if n.volume != expected_volume {
            issues.push(format!("{id} volume {} but expected {expected_volume}", n.volume));
        }
        for v in tree.leaves_under(id) {
            under[v] = id.0;
        }
        let expected_cut = graph
            .edges()
            .iter()
            .filter(|&&(a, b)| (under[a] == id.0) != (under[b] == id.0))
            .count() as u64;
        if n.cut != expected_cut {
            issues.push(format!("{id} cut {} but expected {expected_cut}", n.cut));
        }
        if n.cut > n.volume {
            issues.push(format!("{id} cut exceeds volume"));
        }
    }
    if root_node.cut != 0 {
        issues.push(format!("root cut is {}", root_node.cut));
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::with_unit_features(3, vec![(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn flat_tree_is_valid() {
        let g = triangle();
        let t = init_flat_tree(&g).unwrap();
        assert!(validate_tree(&g, &t).is_empty());
        assert_eq!(t.height(), 1);
    }

    #[test]
    fn detached_leaf_is_reported() {
        let g = triangle();
        let mut t = init_flat_tree(&g).unwrap();
        let root = t.root();
        let leaf = t.leaf(2);
        t.node_mut(root).unwrap().children.retain(|&c| c != leaf);
        assert!(!validate_tree(&g, &t).is_empty());
    }

    #[test]
    fn corrupted_volume_is_reported() {
        let g = Graph::with_unit_features(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        let mut t = init_flat_tree(&g).unwrap();
        let j = apply_merge(&g, &mut t, NodeId(0), NodeId(1)).unwrap();
        assert!(validate_tree(&g, &t).is_empty());
        t.node_mut(j).unwrap().volume += 1;
        let issues = validate_tree(&g, &t);
        assert!(issues.iter().any(|i| i.contains("volume")), "{issues:?}");
    }

    #[test]
    fn json_round_trip() {
        let g = Graph::with_unit_features(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        let t = build_coding_tree(&g, 2).unwrap();
        let text = serde_json::to_string(&t.to_json()).unwrap();
        let back = CodingTree::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(t, back);
    }
}
