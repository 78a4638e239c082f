mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use treeood::eval::{auc, auc_trapezoid};
use treeood::losses::{cri_loss, info_nce, pseudo_labels, DEFAULT_EPSILON};
use treeood::nn::{gin_forward, tree_forward, DenseMatrix, GraphEncoderParams, ReadoutNorm, TreeEncoderParams};
use treeood::positional::{augmented_view, rw_diffusion_encoding};
use treeood::tree::{
    apply_drop, apply_merge, build_coding_tree, drop_delta, init_flat_tree, merge_delta, structural_entropy, NodeId,
};
use treeood::tudataset::parse_tud_dataset;
use treeood::Graph;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Diagonal of `(A D^-1)^t` for t = 1..=r by dense powers.
fn rw_oracle(graph: &Graph, r: usize) -> Vec<Vec<f64>> {
    let n = graph.node_count();
    let mut rw = vec![vec![0.0; n]; n];
    for &(u, v) in graph.edges() {
        rw[u][v] = 1.0 / graph.degree(v) as f64;
        rw[v][u] = 1.0 / graph.degree(u) as f64;
    }
    let mut power = rw.clone();
    let mut out = vec![Vec::new(); n];
    for _ in 0..r {
        for i in 0..n {
            out[i].push(power[i][i]);
        }
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    next[i][j] += power[i][k] * rw[k][j];
                }
            }
        }
        power = next;
    }
    out
}

#[test]
fn random_walk_encoding_matches_matrix_powers() {
    let p3 = Graph::with_unit_features(3, vec![(0, 1), (1, 2)]).unwrap();
    let enc = rw_diffusion_encoding(&p3, 2).unwrap();
    assert_eq!(enc.row(1), &[0.0, 1.0]);
    let view = augmented_view(&p3, 2).unwrap();
    for v in 0..3 {
        let expected = rw_oracle(&p3, 2)[v].clone();
        assert_eq!(&view.combined.row(v)[..2], expected.as_slice());
        assert_eq!(view.combined.row(v)[2], 1.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.gen_range(2..12);
        let g = random_connected_graph(n, 0.3, &mut rng);
        let enc = rw_diffusion_encoding(&g, 6).unwrap();
        let oracle = rw_oracle(&g, 6);
        for v in 0..n {
            for t in 0..6 {
                assert!(close(enc.row(v)[t], oracle[v][t], 1e-12));
            }
        }
    }
}

#[test]
fn entropy_matches_term_by_term_oracle() {
    // P4 grouped as {0,1} and {2,3}
    let p4 = Graph::with_unit_features(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
    let mut t = init_flat_tree(&p4).unwrap();
    apply_merge(&p4, &mut t, NodeId(0), NodeId(1)).unwrap();
    apply_merge(&p4, &mut t, NodeId(2), NodeId(3)).unwrap();
    let expected = partition_entropy(&p4, &[vec![0, 1], vec![2, 3]]);
    assert!(close(structural_entropy(&p4, &t).unwrap(), expected, 1e-12));
    // by hand: blocks have vol 3, cut 1; leaves 1/6 log(1/3) twice and 2/6 log(2/3) twice
    let by_hand = -2.0 * (1.0 / 6.0) * (0.5f64).log2()
        - 2.0 * (1.0 / 6.0) * (1.0f64 / 3.0).log2()
        - 2.0 * (2.0 / 6.0) * (2.0f64 / 3.0).log2();
    assert!(close(expected, by_hand, 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 2..=4 {
        for _ in 0..30 {
            let g = random_graph(rng.gen_range(2..25), 0.2, &mut rng);
            let tree = build_coding_tree(&g, k).unwrap();
            assert!(close(
                structural_entropy(&g, &tree).unwrap(),
                entropy_oracle(&g, &tree),
                1e-10
            ));
        }
    }
}

#[test]
fn flat_tree_entropy_is_degree_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let g = random_graph(rng.gen_range(2..30), 0.3, &mut rng);
        let w = g.volume() as f64;
        let degree_entropy: f64 = (0..g.node_count())
            .map(|v| g.degree(v) as f64 / w)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.log2())
            .sum();
        let flat = init_flat_tree(&g).unwrap();
        assert!(close(structural_entropy(&g, &flat).unwrap(), degree_entropy, 1e-12));
    }
}

#[test]
fn merge_deltas_on_two_triangles() {
    let g = two_triangles_with_bridge();
    let flat = init_flat_tree(&g).unwrap();
    let before = structural_entropy(&g, &flat).unwrap();
    let mut deltas = Vec::new();
    for (a, b) in [(0, 1), (0, 4)] {
        let delta = merge_delta(&g, &flat, NodeId(a), NodeId(b)).unwrap();
        let mut t = flat.clone();
        apply_merge(&g, &mut t, NodeId(a), NodeId(b)).unwrap();
        assert!(close(before - structural_entropy(&g, &t).unwrap(), delta, 1e-12));
        deltas.push(delta);
    }
    assert!(deltas[0] > 0.0);
    assert!(deltas[1] < deltas[0]);

    let k2 = Graph::with_unit_features(2, vec![(0, 1)]).unwrap();
    assert_eq!(
        merge_delta(&k2, &init_flat_tree(&k2).unwrap(), NodeId(0), NodeId(1)).unwrap(),
        0.0
    );
}

#[test]
fn drop_deltas_on_binary_tree_over_p4() {
    let p4 = Graph::with_unit_features(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
    let mut t = init_flat_tree(&p4).unwrap();
    let a = apply_merge(&p4, &mut t, NodeId(0), NodeId(1)).unwrap();
    let b = apply_merge(&p4, &mut t, NodeId(2), NodeId(3)).unwrap();
    let top = apply_merge(&p4, &mut t, a, b).unwrap();
    assert_eq!(t.height(), 3);
    let before = structural_entropy(&p4, &t).unwrap();
    let mut best = (f64::INFINITY, top);
    for m in [a, b, top] {
        let delta = drop_delta(&p4, &t, m).unwrap();
        let mut after = t.clone();
        apply_drop(&mut after, m).unwrap();
        assert!(close(structural_entropy(&p4, &after).unwrap() - before, delta, 1e-12));
        if delta < best.0 {
            best = (delta, m);
        }
    }
    // the wrapper under the root has zero cut and the same volume as the root
    assert_eq!(drop_delta(&p4, &t, top).unwrap(), 0.0);
    assert_eq!(best.1, top);

    let mut both = t.clone();
    apply_drop(&mut both, a).unwrap();
    apply_drop(&mut both, b).unwrap();
    assert_eq!(both.height(), 2);
    assert!(treeood::tree::validate_tree(&p4, &both).is_empty());
}

#[test]
fn two_triangles_split_is_the_exhaustive_optimum() {
    let g = two_triangles_with_bridge();
    let (best, blocks) = two_level_optimum(&g);
    let mut blocks = blocks;
    blocks.sort();
    assert_eq!(blocks, vec![vec![0, 1, 2], vec![3, 4, 5]]);
    let tree = build_coding_tree(&g, 2).unwrap();
    assert_eq!(tree.top_level_communities(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
    assert!(close(structural_entropy(&g, &tree).unwrap(), best, 1e-12));
}

#[test]
fn gin_matches_straight_line_reimplementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for trial in 0..10 {
        let n = 5;
        let g = random_graph(n, 0.5, &mut rng);
        let d = rng.gen_range(1..4);
        let x = random_matrix(n, d, &mut rng);
        let mut params = GraphEncoderParams::new(d, 4, 3, &mut rng);
        if trial % 2 == 1 {
            let width = params.readout_norm.width();
            params.readout_norm = ReadoutNorm {
                shift: random_matrix(1, width, &mut rng),
                scale: DenseMatrix::from_vec(1, width, (0..width).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap(),
            };
        }
        let (z, _) = gin_forward(&params, &g, &x).unwrap();
        let oracle = gin_straight_line(&params, &g, &x);
        for (a, b) in z.iter().zip(&oracle) {
            assert!(close(*a, *b, 1e-10), "{a} vs {b}");
        }
    }
}

#[test]
fn gin_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let g = random_connected_graph(7, 0.3, &mut rng);
    let g = g.with_features(random_matrix(7, 2, &mut rng)).unwrap();
    let params = GraphEncoderParams::new(2, 5, 4, &mut rng);
    let perm = [3, 6, 0, 5, 1, 4, 2];
    let h = g.permuted(&perm).unwrap();
    let (a, _) = gin_forward(&params, &g, g.features()).unwrap();
    let (b, _) = gin_forward(&params, &h, h.features()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(close(*x, *y, 1e-10));
    }
}

#[test]
fn tree_encoder_matches_straight_line_reimplementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for k in [2, 3] {
        for _ in 0..5 {
            let g = random_connected_graph(6, 0.3, &mut rng);
            let tree = build_coding_tree(&g, k).unwrap();
            let x = random_matrix(6, 2, &mut rng);
            let params = TreeEncoderParams::new(2, 4, 3, k, &mut rng);
            let (z, _) = tree_forward(&params, &tree, &x).unwrap();
            let oracle = tree_straight_line(&params, &tree, &x);
            for (a, b) in z.iter().zip(&oracle) {
                assert!(close(*a, *b, 1e-10), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn tree_encoder_ignores_child_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let g = random_connected_graph(9, 0.25, &mut rng);
    let tree = build_coding_tree(&g, 3).unwrap();
    let mut json = tree.to_json();
    for node in &mut json.nodes {
        node.children.reverse();
    }
    let reordered = treeood::CodingTree::from_json(&json).unwrap();
    let x = random_matrix(9, 3, &mut rng);
    let params = TreeEncoderParams::new(3, 4, 4, 3, &mut rng);
    let (a, _) = tree_forward(&params, &tree, &x).unwrap();
    let (b, _) = tree_forward(&params, &reordered, &x).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(close(*x, *y, 1e-10));
    }
}

#[test]
fn losses_match_double_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..50 {
        let n = rng.gen_range(2..=16);
        let d = rng.gen_range(1..=8);
        let za = random_matrix(n, d, &mut rng);
        let zb = random_matrix(n, d, &mut rng);
        let tau = rng.gen_range(0.1..1.0);
        let got = info_nce(&za, &zb, tau).unwrap();
        for (a, b) in got.per_sample.iter().zip(info_nce_double_loop(&za, &zb, tau)) {
            assert!(close(*a, b, 1e-10));
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let got = cri_loss(&za, &zb, &labels, DEFAULT_EPSILON).unwrap();
        for (a, b) in got.per_sample.iter().zip(cri_double_loop(&za, &zb, &labels)) {
            assert!(close(*a, b, 1e-10));
        }
    }
}

#[test]
fn pseudo_labels_equal_softmax_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let z = random_matrix(40, 5, &mut rng);
    for (i, label) in pseudo_labels(&z).into_iter().enumerate() {
        let row = z.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let soft: Vec<f64> = row.iter().map(|v| (v - max).exp() / denom).collect();
        let argmax = (0..5).fold(0, |best, j| if soft[j] > soft[best] { j } else { best });
        assert_eq!(label, argmax);
    }
}

#[test]
fn auc_matches_pair_counting_and_trapezoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..100 {
        let n = rng.gen_range(2..80);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        // coarse grid so ties are common
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0.0..1.0f64) * 10.0).floor()).collect();
        let expected = pair_count_auc(&scores, &labels);
        assert!(close(auc(&scores, &labels).unwrap(), expected, 1e-12));
        assert!(close(auc_trapezoid(&scores, &labels).unwrap(), expected, 1e-12));
    }
}

#[test]
fn tudataset_toy_directory() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tud_pair");
    let c = parse_tud_dataset(dir).unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!(c.graphs()[0].node_count(), 2);
    assert_eq!(c.graphs()[0].edge_count(), 1);
    assert_eq!(c.graphs()[1].node_count(), 3);
    assert_eq!(c.graphs()[1].edge_count(), 3);
    assert_eq!(c.labels(), Some(&[0, 1][..]));
}
