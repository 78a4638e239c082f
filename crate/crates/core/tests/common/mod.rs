//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls the crate's own entropy, loss or encoder code: the
//! oracles recompute everything from raw edges, raw weights and nested loops.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use treeood::nn::{
    DenseMatrix, GraphEncoderParams, Linear, MlpParams, Parameterized, ReadoutNorm, Tape, TreeEncoderParams, Var,
};
use treeood::tree::{CodingTree, NodeId};
use treeood::{Graph, Result};

// ---------------------------------------------------------------- graphs

/// Random spanning tree plus each remaining pair with probability `p`.
pub fn random_connected_graph<R: Rng>(n: usize, p: f64, rng: &mut R) -> Graph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((order[rng.gen_range(0..i)], order[i]));
    }
    for u in 0..n {
        for v in u + 1..n {
            let present = edges.iter().any(|&(a, b)| (a.min(b), a.max(b)) == (u, v));
            if !present && rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::with_unit_features(n, edges).unwrap()
}

/// G(n, p) with at least one edge; may be disconnected or have isolated nodes.
pub fn random_graph<R: Rng>(n: usize, p: f64, rng: &mut R) -> Graph {
    assert!(n >= 2);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    if edges.is_empty() {
        let u = rng.gen_range(0..n - 1);
        edges.push((u, u + 1));
    }
    Graph::with_unit_features(n, edges).unwrap()
}

pub fn two_triangles_with_bridge() -> Graph {
    Graph::with_unit_features(6, vec![(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]).unwrap()
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

// --------------------------------------------------------------- entropy

fn degree_sum(graph: &Graph, set: &[bool]) -> u64 {
    graph.edges().iter().map(|&(u, v)| set[u] as u64 + set[v] as u64).sum()
}

fn boundary(graph: &Graph, set: &[bool]) -> u64 {
    graph.edges().iter().filter(|&&(u, v)| set[u] != set[v]).count() as u64
}

fn membership(n: usize, members: &[usize]) -> Vec<bool> {
    let mut set = vec![false; n];
    for &v in members {
        set[v] = true;
    }
    set
}

/// Volume and cut of the node set under every live tree node, counted from
/// the edge list.
pub fn raw_bookkeeping(graph: &Graph, tree: &CodingTree) -> Vec<(NodeId, u64, u64)> {
    tree.iter()
        .map(|(id, _)| {
            let set = membership(graph.node_count(), &tree.leaves_under(id));
            (id, degree_sum(graph, &set), boundary(graph, &set))
        })
        .collect()
}

/// Term-by-term structural entropy from leaf sets only.
pub fn entropy_oracle(graph: &Graph, tree: &CodingTree) -> f64 {
    let n = graph.node_count();
    let total = 2.0 * graph.edge_count() as f64;
    let mut h = 0.0;
    for (id, node) in tree.iter() {
        let Some(parent) = node.parent else { continue };
        let set = membership(n, &tree.leaves_under(id));
        let (vol, cut) = (degree_sum(graph, &set), boundary(graph, &set));
        let parent_vol = degree_sum(graph, &membership(n, &tree.leaves_under(parent)));
        if cut > 0 && vol > 0 {
            h -= cut as f64 / total * (vol as f64 / parent_vol as f64).log2();
        }
    }
    h
}

/// Entropy of the height-2 tree root -> blocks -> leaves.
pub fn partition_entropy(graph: &Graph, blocks: &[Vec<usize>]) -> f64 {
    let n = graph.node_count();
    let total = 2.0 * graph.edge_count() as f64;
    let mut h = 0.0;
    for block in blocks {
        let set = membership(n, block);
        let (vol, cut) = (degree_sum(graph, &set), boundary(graph, &set));
        if cut > 0 && vol > 0 {
            h -= cut as f64 / total * (vol as f64 / total).log2();
        }
        for &v in block {
            let d = graph.degree(v) as f64;
            if d > 0.0 {
                h -= d / total * (d / vol as f64).log2();
            }
        }
    }
    h
}

/// Every set partition of `0..n`, by restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    fn grow(i: usize, n: usize, assign: &mut Vec<usize>, blocks: usize, out: &mut Vec<Vec<Vec<usize>>>) {
        if i == n {
            let mut parts = vec![Vec::new(); blocks];
            for (v, &b) in assign.iter().enumerate() {
                parts[b].push(v);
            }
            out.push(parts);
            return;
        }
        for b in 0..=blocks {
            assign.push(b);
            grow(i + 1, n, assign, blocks.max(b + 1), out);
            assign.pop();
        }
    }
    let mut out = Vec::new();
    grow(0, n, &mut Vec::new(), 0, &mut out);
    out
}

/// Minimum entropy over all 2-level partition trees, with a minimizer.
pub fn two_level_optimum(graph: &Graph) -> (f64, Vec<Vec<usize>>) {
    set_partitions(graph.node_count())
        .into_iter()
        .map(|p| (partition_entropy(graph, &p), p))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

// ---------------------------------------------------------------- losses

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// `-log(e^{s(a_i,b_i)/t} / sum_{j != i} e^{s(a_i,a_j)/t})` per sample.
pub fn info_nce_double_loop(za: &DenseMatrix, zb: &DenseMatrix, tau: f64) -> Vec<f64> {
    let n = za.rows();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += (cosine(za.row(i), za.row(j)) / tau).exp();
            }
        }
        let num = (cosine(za.row(i), zb.row(i)) / tau).exp();
        out.push(-(num / denom).ln());
    }
    out
}

/// `s(Z_i, T_i) - log mean_{j in group(i), j != i} e^{s(Z_j, T_i)}`, where a
/// sample alone in its group uses every other sample.
pub fn cri_double_loop(z: &DenseMatrix, zt: &DenseMatrix, labels: &[usize]) -> Vec<f64> {
    let n = z.rows();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let group = (0..n).filter(|&j| j != i && labels[j] == labels[i]).count();
        let mut sum = 0.0;
        let mut count = 0.0;
        for j in 0..n {
            if j != i && (group == 0 || labels[j] == labels[i]) {
                sum += cosine(z.row(j), zt.row(i)).exp();
                count += 1.0;
            }
        }
        out.push(cosine(z.row(i), zt.row(i)) - (sum / count).ln());
    }
    out
}

/// Fraction of (ood, id) pairs ranked correctly, ties counting half.
pub fn pair_count_auc(scores: &[f64], is_ood: &[bool]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if is_ood[i] && !is_ood[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
    }
    credit / pairs
}

// -------------------------------------------------------------- encoders

type Rows = Vec<Vec<f64>>;

fn linear(layer: &Linear, x: &[f64]) -> Vec<f64> {
    let (w, b) = (&layer.weight, &layer.bias);
    (0..w.cols())
        .map(|o| b.row(0)[o] + (0..w.rows()).map(|i| x[i] * w.row(i)[o]).sum::<f64>())
        .collect()
}

fn mlp(params: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, layer) in params.layers.iter().enumerate() {
        if i > 0 {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = linear(layer, &h);
    }
    h
}

fn normalize(norm: &ReadoutNorm, x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(c, v)| (v - norm.shift.row(0)[c]) * norm.scale.row(0)[c])
        .collect()
}

/// Five rounds of `relu(MLP(h_v + sum of neighbour states))`, mean pool
/// after every round, concatenate, standardize, project.
pub fn gin_straight_line(params: &GraphEncoderParams, graph: &Graph, features: &DenseMatrix) -> Vec<f64> {
    let n = graph.node_count();
    let mut h: Rows = (0..n).map(|v| features.row(v).to_vec()).collect();
    let mut readout = Vec::new();
    for layer in &params.gin_layers {
        let mut next = Vec::with_capacity(n);
        for v in 0..n {
            let mut agg = h[v].clone();
            for &u in graph.neighbors(v) {
                for (a, x) in agg.iter_mut().zip(&h[u]) {
                    *a += x;
                }
            }
            next.push(mlp(layer, &agg).into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>());
        }
        h = next;
        let width = h[0].len();
        readout.extend((0..width).map(|c| h.iter().map(|row| row[c]).sum::<f64>() / n as f64));
    }
    mlp(&params.projection, &normalize(&params.readout_norm, &readout))
}

fn node_height(tree: &CodingTree, id: NodeId) -> usize {
    tree.children(id)
        .iter()
        .map(|&c| node_height(tree, c) + 1)
        .max()
        .unwrap_or(0)
}

fn tree_state(params: &TreeEncoderParams, tree: &CodingTree, features: &DenseMatrix, id: NodeId) -> Vec<f64> {
    let node = tree.node(id).unwrap();
    if let Some(v) = node.graph_node {
        return linear(&params.leaf_embed, features.row(v));
    }
    let mut sum = vec![0.0; params.hidden_dim];
    for &c in &node.children {
        for (s, x) in sum.iter_mut().zip(tree_state(params, tree, features, c)) {
            *s += x;
        }
    }
    mlp(&params.level_mlps[node_height(tree, id) - 1], &sum)
}

/// Recursive bottom-up evaluation: a node at height `l` applies the level-`l`
/// MLP to the sum of its children's states.
pub fn tree_straight_line(params: &TreeEncoderParams, tree: &CodingTree, features: &DenseMatrix) -> Vec<f64> {
    let root = tree_state(params, tree, features, tree.root());
    mlp(&params.projection, &normalize(&params.readout_norm, &root))
}

// ------------------------------------------------------ finite differences

/// Largest relative disagreement between the tape gradient of `loss` and
/// central differences with step `h`. Gradients smaller than `floor` are
/// compared on an absolute scale of `floor`.
pub fn max_gradient_error<P, F>(params: &P, loss: F, h: f64, floor: f64) -> Result<f64>
where
    P: Parameterized + Clone,
    F: Fn(&mut Tape, &P::Bound) -> Result<Var>,
{
    let (_, analytic) = treeood::nn::loss_gradient(params, &loss)?;
    let eval = |p: &P| treeood::nn::loss_gradient(p, &loss).map(|(v, _)| v);
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.tensors.iter().enumerate() {
        for k in 0..grad.data().len() {
            let mut plus = params.clone();
            plus.tensors_mut()[t].data_mut()[k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].data_mut()[k] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = grad.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
