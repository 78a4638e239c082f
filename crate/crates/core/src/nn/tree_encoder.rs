//! Bottom-up coding-tree encoder.
//!
//! Leaf features are first mapped to the hidden width by a linear embedding.
//! A node at height `l` (longest distance down to a leaf) then takes
//! `MLP_l(sum of its children's states)`. Nodes keep their state unchanged
//! through levels above their own height, so trees shorter than the
//! configured depth pass straight through the missing levels. The root state
//! after the last level is standardized per column and goes through a
//! projection head; see the graph encoder for the two standardization modes.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tree::CodingTree;

use super::matrix::{DenseMatrix, SparseMatrix};
use super::mlp::{mlp_from_named, prefixed, Binder, BoundLinear, BoundMlp, Linear, MlpParams, Parameterized};
use super::norm::{BoundNorm, ReadoutNorm, READOUT_EPS};
use super::tape::{Tape, Var};
use super::Trace;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEncoderParams {
    pub leaf_embed: Linear,
    /// One MLP per tree level, bottom to top.
    pub level_mlps: Vec<MlpParams>,
    pub projection: MlpParams,
    pub readout_norm: ReadoutNorm,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl TreeEncoderParams {
    pub fn new<R: Rng>(input_dim: usize, hidden_dim: usize, output_dim: usize, height: usize, rng: &mut R) -> Self {
        Self {
            leaf_embed: Linear::new(input_dim, hidden_dim, rng),
            level_mlps: (0..height)
                .map(|_| MlpParams::new(&[hidden_dim, hidden_dim, hidden_dim], rng))
                .collect(),
            projection: MlpParams::new(&[hidden_dim, output_dim, output_dim], rng),
            readout_norm: ReadoutNorm::identity(hidden_dim),
            input_dim,
            hidden_dim,
        }
    }

    /// Every layer the identity map (`dim` wide everywhere).
    pub fn identity(dim: usize, height: usize) -> Self {
        Self {
            leaf_embed: Linear::identity(dim),
            level_mlps: (0..height).map(|_| MlpParams::identity(dim, 2)).collect(),
            projection: MlpParams::identity(dim, 2),
            readout_norm: ReadoutNorm::identity(dim),
            input_dim: dim,
            hidden_dim: dim,
        }
    }

    pub fn height(&self) -> usize {
        self.level_mlps.len()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.output_dim()
    }

    pub fn check(&self) -> Result<()> {
        if self.leaf_embed.input_dim() != self.input_dim || self.leaf_embed.output_dim() != self.hidden_dim {
            return Err(Error::Shape("leaf embedding does not match encoder widths".into()));
        }
        for (l, mlp) in self.level_mlps.iter().enumerate() {
            mlp.check()?;
            if mlp.input_dim() != self.hidden_dim || mlp.output_dim() != self.hidden_dim {
                return Err(Error::Shape(format!("level {} MLP is not hidden -> hidden", l + 1)));
            }
        }
        self.projection.check()?;
        if self.projection.input_dim() != self.hidden_dim {
            return Err(Error::Shape("projection input does not match hidden width".into()));
        }
        self.readout_norm.check(self.hidden_dim)
    }

    pub(crate) fn from_named(
        named: &[(String, DenseMatrix)],
        input_dim: usize,
        hidden_dim: usize,
        height: usize,
    ) -> Result<Self> {
        let leaf = mlp_from_named("leaf_embed", named)?;
        let [leaf_embed] = <[Linear; 1]>::try_from(leaf.layers)
            .map_err(|_| Error::Format("leaf_embed must be a single layer".into()))?;
        let params = Self {
            leaf_embed,
            level_mlps: (0..height)
                .map(|l| mlp_from_named(&format!("level.{l}"), named))
                .collect::<Result<_>>()?,
            projection: mlp_from_named("projection", named)?,
            readout_norm: ReadoutNorm::from_named(named)?,
            input_dim,
            hidden_dim,
        };
        params.check().map_err(|e| Error::Format(e.to_string()))?;
        Ok(params)
    }
}

#[derive(Debug, Clone)]
pub struct BoundTreeEncoder {
    pub leaf_embed: BoundLinear,
    pub levels: Vec<BoundMlp>,
    pub projection: BoundMlp,
    pub readout_norm: BoundNorm,
}

impl Parameterized for TreeEncoderParams {
    type Bound = BoundTreeEncoder;

    fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> BoundTreeEncoder {
        BoundTreeEncoder {
            leaf_embed: self.leaf_embed.bind(tape, binder),
            levels: self.level_mlps.iter().map(|m| m.bind(tape, binder)).collect(),
            projection: self.projection.bind(tape, binder),
            readout_norm: self.readout_norm.bind(tape),
        }
    }

    fn named_tensors(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = prefixed("leaf_embed.0", self.leaf_embed.named_tensors());
        for (l, mlp) in self.level_mlps.iter().enumerate() {
            out.extend(prefixed(&format!("level.{l}"), mlp.named_tensors()));
        }
        out.extend(prefixed("projection", self.projection.named_tensors()));
        out
    }

    fn named_buffers(&self) -> Vec<(String, &DenseMatrix)> {
        self.readout_norm.named()
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = self.leaf_embed.tensors_mut();
        out.extend(self.level_mlps.iter_mut().flat_map(|m| m.tensors_mut()));
        out.extend(self.projection.tensors_mut());
        out
    }
}

#[derive(Debug, Clone)]
struct Level {
    gather: Arc<SparseMatrix>,
    scatter: Arc<SparseMatrix>,
    keep: Arc<SparseMatrix>,
}

/// Several coding trees packed as a forest, with the level structure needed
/// for batched bottom-up propagation.
#[derive(Debug, Clone)]
pub struct TreeBatch {
    leaf_features: DenseMatrix,
    place_leaves: Arc<SparseMatrix>,
    levels: Vec<Option<Level>>,
    roots: Arc<SparseMatrix>,
}

impl TreeBatch {
    /// `features[b]` row `v` is the input of the leaf of graph node `v` in `trees[b]`.
    pub fn new(trees: &[&CodingTree], features: &[&DenseMatrix], depth: usize) -> Result<Self> {
        if trees.len() != features.len() {
            return Err(Error::Shape("one feature matrix per tree required".into()));
        }
        let mut leaf_rows: Vec<&[f64]> = Vec::new();
        let mut place = Vec::new();
        let mut roots = Vec::new();
        let mut by_height: Vec<Vec<(usize, Vec<usize>)>> = vec![Vec::new(); depth + 1];
        let mut offset = 0;
        for (b, (tree, f)) in trees.iter().zip(features).enumerate() {
            if f.rows() != tree.leaf_count() {
                return Err(Error::Structure(format!(
                    "tree {b} has {} leaves but {} feature rows",
                    tree.leaf_count(),
                    f.rows()
                )));
            }
            let heights = tree.node_heights();
            let order = tree.post_order();
            let mut row_of = vec![usize::MAX; tree.capacity()];
            for (i, &id) in order.iter().enumerate() {
                row_of[id.0] = offset + i;
            }
            let mut seen_leaves = 0;
            for &id in &order {
                let node = tree.node(id).unwrap();
                let row = row_of[id.0];
                if let Some(v) = node.graph_node {
                    if v >= f.rows() || tree.leaf(v) != id {
                        return Err(Error::Structure(format!(
                            "tree {b}: leaf {id} breaks the leaf bijection"
                        )));
                    }
                    place.push((row, leaf_rows.len(), 1.0));
                    leaf_rows.push(f.row(v));
                    seen_leaves += 1;
                    continue;
                }
                let h = heights[id.0].unwrap();
                if h > depth {
                    return Err(Error::Structure(format!(
                        "tree {b} has height {h}, encoder handles at most {depth}"
                    )));
                }
                if h == 0 {
                    // a childless root: nothing to aggregate
                    continue;
                }
                let kids = node.children.iter().map(|c| row_of[c.0]).collect();
                by_height[h].push((row, kids));
            }
            if seen_leaves != tree.leaf_count() {
                return Err(Error::Structure(format!("tree {b}: leaves are detached from the root")));
            }
            roots.push((b, row_of[tree.root().0], 1.0));
            offset += order.len();
        }
        let total = offset;
        let levels = by_height
            .into_iter()
            .skip(1)
            .map(|nodes| {
                if nodes.is_empty() {
                    return None;
                }
                let mut gather = Vec::new();
                let mut scatter = Vec::new();
                let mut at_level = vec![false; total];
                for (i, (row, kids)) in nodes.iter().enumerate() {
                    at_level[*row] = true;
                    scatter.push((*row, i, 1.0));
                    gather.extend(kids.iter().map(|&k| (i, k, 1.0)));
                }
                let keep = (0..total).filter(|&r| !at_level[r]).map(|r| (r, r, 1.0)).collect();
                Some(Level {
                    gather: Arc::new(SparseMatrix::from_triplets(nodes.len(), total, gather)),
                    scatter: Arc::new(SparseMatrix::from_triplets(total, nodes.len(), scatter)),
                    keep: Arc::new(SparseMatrix::from_triplets(total, total, keep)),
                })
            })
            .collect();
        Ok(Self {
            leaf_features: DenseMatrix::vstack(&leaf_rows)?,
            place_leaves: Arc::new(SparseMatrix::from_triplets(total, leaf_rows.len(), place)),
            levels,
            roots: Arc::new(SparseMatrix::from_triplets(trees.len(), total, roots)),
        })
    }

    pub fn len(&self) -> usize {
        self.roots.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

impl BoundTreeEncoder {
    /// Tree embeddings, `B x output_dim`.
    pub fn forward(&self, tape: &mut Tape, batch: &TreeBatch) -> Result<Var> {
        let root = self.root_states(tape, batch)?;
        let root = self.readout_norm.forward(tape, root)?;
        self.projection.forward(tape, root)
    }

    /// Like [`forward`](Self::forward) but standardizing with the batch's
    /// own root-state statistics.
    pub fn forward_batch_stats(&self, tape: &mut Tape, batch: &TreeBatch) -> Result<Var> {
        let root = self.root_states(tape, batch)?;
        let root = tape.standardize_cols(root, READOUT_EPS);
        self.projection.forward(tape, root)
    }

    /// Root state of every tree after the last level, `B x hidden`.
    pub fn root_states(&self, tape: &mut Tape, batch: &TreeBatch) -> Result<Var> {
        if batch.depth() != self.levels.len() {
            return Err(Error::Shape(format!(
                "batch prepared for depth {}, encoder has {} levels",
                batch.depth(),
                self.levels.len()
            )));
        }
        let x = tape.constant(batch.leaf_features.clone());
        let leaves = self.leaf_embed.forward(tape, x)?;
        let mut state = tape.sparse_mul(batch.place_leaves.clone(), leaves)?;
        for (mlp, level) in self.levels.iter().zip(&batch.levels) {
            let Some(level) = level else { continue };
            let summed = tape.sparse_mul(level.gather.clone(), state)?;
            let updated = mlp.forward(tape, summed)?;
            let kept = tape.sparse_mul(level.keep.clone(), state)?;
            let placed = tape.sparse_mul(level.scatter.clone(), updated)?;
            state = tape.add(kept, placed)?;
        }
        tape.sparse_mul(batch.roots.clone(), state)
    }
}

/// Embeds one coding tree whose leaves carry the rows of `leaf_features`.
pub fn tree_forward(
    params: &TreeEncoderParams,
    tree: &CodingTree,
    leaf_features: &DenseMatrix,
) -> Result<(Vec<f64>, Trace)> {
    params.check()?;
    if leaf_features.cols() != params.input_dim {
        return Err(Error::Shape(format!(
            "leaf features have width {}, encoder expects {}",
            leaf_features.cols(),
            params.input_dim
        )));
    }
    let batch = TreeBatch::new(&[tree], &[leaf_features], params.height())?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, &mut Binder::new(true));
    let output = bound.forward(&mut tape, &batch)?;
    let embedding = tape.value(output).row(0).to_vec();
    Ok((embedding, Trace { tape, output }))
}
