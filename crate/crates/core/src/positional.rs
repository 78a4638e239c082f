//! Perturbation-free positional view: random-walk return probabilities and
//! the diagonal of the normalized Laplacian.

use log::warn;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::DenseMatrix;

/// Default random-walk length.
pub const DEFAULT_WALK_LENGTH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PositionalView {
    pub rw_encoding: DenseMatrix,
    pub lp_encoding: Vec<f64>,
    /// Row `i` is `[rw_i || lp_i]`, width `r + 1`.
    pub combined: DenseMatrix,
}

/// Column `t - 1` holds the diagonal of `(A D^-1)^t` for `t = 1..=r`.
///
/// Isolated nodes have an all-zero column in the transition matrix and hence
/// an all-zero encoding.
pub fn rw_diffusion_encoding(graph: &Graph, r: usize) -> Result<DenseMatrix> {
    if r == 0 {
        return Err(Error::Parameter("walk length must be at least 1".into()));
    }
    let n = graph.node_count();
    let isolated = graph.isolated_nodes().count();
    if isolated > 0 {
        warn!("{isolated} isolated nodes get all-zero random-walk encodings");
    }
    let inv_degree: Vec<f64> = graph
        .degrees()
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
        .collect();

    let mut out = DenseMatrix::zeros(n, r);
    // power holds (A D^-1)^t, next is the single workspace for the product
    let mut power = DenseMatrix::identity(n);
    let mut next = DenseMatrix::zeros(n, n);
    for t in 0..r {
        next.data_mut().fill(0.0);
        for i in 0..n {
            for &k in graph.neighbors(i) {
                let w = inv_degree[k];
                let (src_row, dst_row) = (k * n, i * n);
                let src = &power.data()[src_row..src_row + n];
                let dst = &mut next.data_mut()[dst_row..dst_row + n];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        std::mem::swap(&mut power, &mut next);
        for i in 0..n {
            out[(i, t)] = power[(i, i)];
        }
    }
    Ok(out)
}

/// Diagonal of `I - D^-1/2 A D^-1/2`: one for every node with an edge, zero
/// for isolated nodes.
pub fn laplacian_positional_encoding(graph: &Graph) -> Vec<f64> {
    graph
        .degrees()
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { 1.0 })
        .collect()
}

pub fn augmented_view(graph: &Graph, r: usize) -> Result<PositionalView> {
    let rw_encoding = rw_diffusion_encoding(graph, r)?;
    let lp_encoding = laplacian_positional_encoding(graph);
    let lp_column = DenseMatrix::from_vec(lp_encoding.len(), 1, lp_encoding.clone())?;
    let combined = DenseMatrix::hcat(&[&rw_encoding, &lp_column])?;
    Ok(PositionalView {
        rw_encoding,
        lp_encoding,
        combined,
    })
}
