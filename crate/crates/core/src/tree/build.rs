//! Greedy construction of a height-limited coding tree.
//!
//! Step 1 starts from the flat tree and repeatedly merges the pair of root
//! children with the largest entropy reduction until the root has at most two
//! children. Step 2 then drops the internal node whose removal increases the
//! entropy least until the height is within the limit.
//!
//! Both steps keep candidates in a heap with lazy invalidation. The gain of
//! merging `a` and `b` is `2 Cut(a, b) / W * log2(vol(root) / (vol(a) + vol(b)))`,
//! so growing one side can only lower it; merge candidates are re-keyed when
//! popped rather than whenever a neighbor grows. A drop candidate goes stale
//! whenever the node's child set or parent changes, which a per-node version
//! counter tracks.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::graph::Graph;

use super::entropy::{check_droppable, check_root_pair, cut_between, drop_cost, merge_gain};
use super::{CodingTree, NodeId, TreeNode};

/// Root with every graph node as a leaf child. Leaf `v` gets handle `v`, the
/// root gets handle `n`.
pub fn init_flat_tree(graph: &Graph) -> Result<CodingTree> {
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::Parameter("cannot build a coding tree for an empty graph".into()));
    }
    let root = NodeId(n);
    let mut nodes: Vec<Option<TreeNode>> = (0..n)
        .map(|v| {
            Some(TreeNode {
                parent: Some(root),
                children: Vec::new(),
                volume: graph.degree(v) as u64,
                cut: graph.degree(v) as u64,
                graph_node: Some(v),
            })
        })
        .collect();
    nodes.push(Some(TreeNode {
        parent: None,
        children: (0..n).map(NodeId).collect(),
        volume: graph.volume() as u64,
        cut: 0,
        graph_node: None,
    }));
    Ok(CodingTree::from_parts(nodes, root, (0..n).map(NodeId).collect()))
}

/// MERGE: inserts a new node between the root and its children `a` and `b`.
pub fn apply_merge(graph: &Graph, tree: &mut CodingTree, a: NodeId, b: NodeId) -> Result<NodeId> {
    check_root_pair(tree, a, b)?;
    let cut_ab = cut_between(graph, tree, a, b);
    let (na, nb) = (tree.node(a).unwrap(), tree.node(b).unwrap());
    let root = tree.root();
    let j = tree.push_node(TreeNode {
        parent: Some(root),
        children: vec![a, b],
        volume: na.volume + nb.volume,
        cut: na.cut + nb.cut - 2 * cut_ab,
        graph_node: None,
    });
    tree.node_mut(a).unwrap().parent = Some(j);
    tree.node_mut(b).unwrap().parent = Some(j);
    let root_node = tree.node_mut(root).unwrap();
    root_node.children.retain(|&c| c != a && c != b);
    root_node.children.push(j);
    Ok(j)
}

/// DROP: removes internal node `m`, appending its children to its parent.
pub fn apply_drop(tree: &mut CodingTree, m: NodeId) -> Result<()> {
    check_droppable(tree, m)?;
    let node = tree.remove_node(m).unwrap();
    let p = node.parent.unwrap();
    for &c in &node.children {
        tree.node_mut(c).unwrap().parent = Some(p);
    }
    let parent = tree.node_mut(p).unwrap();
    parent.children.retain(|&c| c != m);
    parent.children.extend(node.children);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeStep {
    pub a: NodeId,
    pub b: NodeId,
    pub merged: NodeId,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropStep {
    pub dropped: NodeId,
    pub cost: f64,
}

/// The sequence of operations performed by [`build_coding_tree_traced`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildTrace {
    pub merges: Vec<MergeStep>,
    pub drops: Vec<DropStep>,
}

/// Builds a coding tree of height at most `k` (k >= 2).
pub fn build_coding_tree(graph: &Graph, k: usize) -> Result<CodingTree> {
    build_coding_tree_traced(graph, k).map(|(tree, _)| tree)
}

pub fn build_coding_tree_traced(graph: &Graph, k: usize) -> Result<(CodingTree, BuildTrace)> {
    if k < 2 {
        return Err(Error::Parameter(format!("tree height {k} < 2")));
    }
    if graph.edge_count() == 0 {
        return Err(Error::Domain(
            "cannot minimize structural entropy of an edgeless graph".into(),
        ));
    }
    let mut builder = Builder::new(graph);
    let mut trace = BuildTrace::default();
    builder.merge_phase(graph, &mut trace);
    builder.drop_phase(k, &mut trace);
    Ok((builder.finish(), trace))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Score(f64);

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Builder {
    leaf_count: usize,
    root: usize,
    total: f64,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    volume: Vec<u64>,
    cut: Vec<u64>,
    alive: Vec<bool>,
}

impl Builder {
    fn new(graph: &Graph) -> Self {
        let n = graph.node_count();
        let mut volume: Vec<u64> = graph.degrees().iter().map(|&d| d as u64).collect();
        volume.push(graph.volume() as u64);
        let mut cut = volume.clone();
        cut[n] = 0;
        let mut parent = vec![Some(n); n];
        parent.push(None);
        let mut children = vec![Vec::new(); n];
        children.push((0..n).collect());
        Self {
            leaf_count: n,
            root: n,
            total: graph.volume() as f64,
            parent,
            children,
            volume,
            cut,
            alive: vec![true; n + 1],
        }
    }

    fn push_node(&mut self, a: usize, b: usize, volume: u64, cut: u64) -> usize {
        let id = self.parent.len();
        self.parent[a] = Some(id);
        self.parent[b] = Some(id);
        self.parent.push(Some(self.root));
        self.children.push(vec![a, b]);
        self.volume.push(volume);
        self.cut.push(cut);
        self.alive.push(true);
        id
    }

    fn gain(&self, a: usize, b: usize, cut_ab: u64) -> f64 {
        merge_gain(
            (self.cut[a], self.volume[a]),
            (self.cut[b], self.volume[b]),
            cut_ab,
            self.volume[self.root],
            self.total,
        )
    }

    fn merge_phase(&mut self, graph: &Graph, trace: &mut BuildTrace) {
        let n = self.leaf_count;
        let root = self.root;
        let mut top: BTreeSet<usize> = (0..n).collect();
        // Each root child lives in a slot. A merge keeps the slot of the side
        // with more neighbors, so only the other side's neighbors need their
        // link keys rewritten. Slots of merged-away ids are never cleared, so
        // an old id still leads to the community that absorbed it.
        let mut slot_node: Vec<usize> = (0..n).collect();
        // indexed by node id; the root's id `n` never names a slot
        let mut node_slot: Vec<u32> = (0..n as u32).chain([u32::MAX]).collect();
        let mut links: Vec<FxHashMap<u32, u32>> = vec![FxHashMap::default(); n];
        // max gain first, then the lexicographically smallest pair of ids
        let mut heap: BinaryHeap<(Score, Reverse<(u32, u32)>)> = BinaryHeap::with_capacity(2 * graph.edge_count());

        for &(a, b) in graph.edges() {
            links[a].insert(b as u32, 1);
            links[b].insert(a as u32, 1);
            heap.push((Score(self.gain(a, b, 1)), Reverse((a as u32, b as u32))));
        }

        let key = |b: &Builder, slot_node: &[usize], s: u32, t: u32, w: u32| {
            let (x, y) = (slot_node[s as usize], slot_node[t as usize]);
            (
                Score(b.gain(x, y, w as u64)),
                Reverse((x.min(y) as u32, x.max(y) as u32)),
            )
        };

        while top.len() > 2 {
            // A stored key never ranks below the pair's current key: gains
            // only fall as volumes grow and ids only rise. So the first entry
            // whose key is still current is the true maximum.
            let (sa, sb, gain) = loop {
                match heap.pop() {
                    Some((_, ids)) => {
                        let Reverse((x, y)) = ids;
                        let (s, t) = (node_slot[x as usize], node_slot[y as usize]);
                        let Some(&w) = links[s as usize].get(&t) else {
                            continue;
                        };
                        let current = key(self, &slot_node, s, t, w);
                        if current.1 == ids || heap.peek().is_none_or(|top| current >= *top) {
                            break (s as usize, t as usize, current.0 .0);
                        }
                        heap.push(current);
                    }
                    None => {
                        // no connected pair left: join the two oldest components
                        let mut it = top.iter();
                        let (a, b) = (*it.next().unwrap(), *it.next().unwrap());
                        break (node_slot[a] as usize, node_slot[b] as usize, self.gain(a, b, 0));
                    }
                }
            };
            let (a, b) = (slot_node[sa], slot_node[sb]);
            let cut_ab = links[sa].get(&(sb as u32)).copied().unwrap_or(0) as u64;
            let j = self.push_node(
                a,
                b,
                self.volume[a] + self.volume[b],
                self.cut[a] + self.cut[b] - 2 * cut_ab,
            );
            let (keep, gone) = if links[sa].len() >= links[sb].len() {
                (sa, sb)
            } else {
                (sb, sa)
            };
            let (keep32, gone32) = (keep as u32, gone as u32);
            links[keep].remove(&gone32);
            let moved = std::mem::take(&mut links[gone]);
            slot_node[keep] = j;
            node_slot.push(keep32);
            // pairs whose edge weight changed get a fresh key; the others
            // keep their stale upper bounds
            for (c, w) in moved {
                if c == keep32 {
                    continue;
                }
                let lc = &mut links[c as usize];
                lc.remove(&gone32);
                *lc.entry(keep32).or_default() += w;
                let merged = links[keep].entry(c).or_default();
                *merged += w;
                let merged = *merged;
                heap.push(key(self, &slot_node, keep32, c, merged));
            }
            top.remove(&a);
            top.remove(&b);
            top.insert(j);
            trace.merges.push(MergeStep {
                a: NodeId(a),
                b: NodeId(b),
                merged: NodeId(j),
                gain,
            });
        }
        self.children[root] = top.into_iter().collect();
    }

    /// Drop costs never depend on heights, so the whole drop sequence is
    /// simulated first and then cut at the shortest prefix that brings the
    /// height within `k`.
    fn drop_phase(&mut self, k: usize, trace: &mut BuildTrace) {
        let size = self.parent.len();
        let root = self.root;
        let first_internal = self.leaf_count + 1;
        let original_parent = self.parent.clone();
        let mut level = vec![0usize; size];
        if self.height_after(&original_parent, &[], 0, &mut level) <= k {
            return;
        }

        let mut children_cut: Vec<u64> = (0..size)
            .map(|m| self.children[m].iter().map(|&c| self.cut[c]).sum())
            .collect();
        let mut version = vec![0u32; size];
        let mut heap: BinaryHeap<Reverse<(Score, u32, u32)>> = BinaryHeap::with_capacity(size);
        let cost = |b: &Builder, children_cut: &[u64], m: usize| {
            let p = b.parent[m].unwrap();
            Score(drop_cost(b.cut[m], children_cut[m], b.volume[m], b.volume[p], b.total))
        };
        for m in first_internal..size {
            heap.push(Reverse((cost(self, &children_cut, m), m as u32, 0)));
        }

        let mut steps: Vec<DropStep> = Vec::new();
        let mut dropped_at = vec![usize::MAX; size];
        while let Some(Reverse((score, m, ver))) = heap.pop() {
            let m = m as usize;
            if !self.alive[m] || version[m] != ver {
                continue;
            }
            let p = self.parent[m].unwrap();
            self.alive[m] = false;
            dropped_at[m] = steps.len();
            children_cut[p] = children_cut[p] - self.cut[m] + children_cut[m];
            // child lists are append-only here; dropped entries are skipped
            for c in std::mem::take(&mut self.children[m]) {
                if !self.alive[c] {
                    continue;
                }
                self.parent[c] = Some(p);
                self.children[p].push(c);
                version[c] += 1;
                if c >= first_internal {
                    heap.push(Reverse((cost(self, &children_cut, c), c as u32, version[c])));
                }
            }
            version[p] += 1;
            if p != root {
                heap.push(Reverse((cost(self, &children_cut, p), p as u32, version[p])));
            }
            steps.push(DropStep {
                dropped: NodeId(m),
                cost: score.0,
            });
        }

        // height only falls as drops accumulate
        let (mut lo, mut hi) = (1, steps.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.height_after(&original_parent, &dropped_at, mid, &mut level) <= k {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        steps.truncate(lo);
        for id in first_internal..size {
            self.alive[id] = dropped_at[id] >= lo;
        }
        // nearest surviving ancestor, resolved top-down
        let mut resolved = original_parent;
        for id in (0..size).rev() {
            if let Some(p) = resolved[id] {
                if !self.alive[p] {
                    resolved[id] = resolved[p];
                }
            }
        }
        for id in 0..size {
            self.parent[id] = if self.alive[id] { resolved[id] } else { None };
        }
        trace.drops = steps;
    }

    /// Height of the binary tree once the first `drops` recorded drops are
    /// applied; `dropped_at[v]` is the step at which `v` was dropped.
    fn height_after(
        &self,
        original_parent: &[Option<usize>],
        dropped_at: &[usize],
        drops: usize,
        level: &mut [usize],
    ) -> usize {
        // level[v] counts surviving strict ancestors; parents have larger ids
        // than their children, except the root
        let mut height = 0;
        for v in (0..original_parent.len()).rev() {
            if v == self.root {
                continue;
            }
            let p = original_parent[v].unwrap();
            level[v] = if p == self.root {
                1
            } else {
                level[p] + (dropped_at.get(p).is_none_or(|&t| t >= drops)) as usize
            };
            if v < self.leaf_count {
                height = height.max(level[v]);
            }
        }
        height
    }

    fn finish(self) -> CodingTree {
        let n = self.leaf_count;
        let mut children = vec![Vec::new(); self.parent.len()];
        for (id, p) in self.parent.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(NodeId(id));
            }
        }
        let nodes = (0..self.parent.len())
            .map(|id| {
                self.alive[id].then(|| TreeNode {
                    parent: self.parent[id].map(NodeId),
                    children: std::mem::take(&mut children[id]),
                    volume: self.volume[id],
                    cut: self.cut[id],
                    graph_node: (id < n).then_some(id),
                })
            })
            .collect();
        CodingTree::from_parts(nodes, NodeId(self.root), (0..n).map(NodeId).collect())
    }
}
