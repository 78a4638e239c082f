//! Five-layer GIN graph encoder.
//!
//! Layer rule: `h_v <- relu(MLP(h_v + sum_{u in N(v)} h_u))` (epsilon fixed at 0).
//! Readout: the mean-pooled node states of every layer are concatenated,
//! standardized per column, and passed through a two-layer projection head.
//!
//! The standardization uses the fixed statistics in `readout_norm` except in
//! [`BoundGraphEncoder::forward_batch_stats`], which uses those of the batch
//! at hand. Fresh encoders hold the identity.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

use super::matrix::{DenseMatrix, SparseMatrix};
use super::mlp::{mlp_from_named, prefixed, Binder, BoundMlp, MlpParams, Parameterized};
use super::norm::{BoundNorm, ReadoutNorm, READOUT_EPS};
use super::tape::{Tape, Var};
use super::Trace;

pub const GIN_LAYERS: usize = 5;
pub const DEFAULT_HIDDEN_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEncoderParams {
    pub gin_layers: Vec<MlpParams>,
    pub projection: MlpParams,
    pub readout_norm: ReadoutNorm,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub frozen: bool,
}

/// Several graphs packed as one disjoint union for batched message passing.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    aggregate: Arc<SparseMatrix>,
    pool: Arc<SparseMatrix>,
    features: DenseMatrix,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph], features: &[&DenseMatrix]) -> Result<Self> {
        if graphs.len() != features.len() {
            return Err(Error::Shape("one feature matrix per graph required".into()));
        }
        let dim = features.first().map_or(0, |f| f.cols());
        let total: usize = graphs.iter().map(|g| g.node_count()).sum();
        let mut agg = Vec::with_capacity(total + 2 * graphs.iter().map(|g| g.edge_count()).sum::<usize>());
        let mut pool = Vec::with_capacity(total);
        let mut rows: Vec<&[f64]> = Vec::with_capacity(total);
        let mut offset = 0;
        for (b, (g, f)) in graphs.iter().zip(features).enumerate() {
            if f.rows() != g.node_count() || f.cols() != dim {
                return Err(Error::Shape(format!(
                    "graph {b}: features {:?} for {} nodes (width {dim} expected)",
                    f.shape(),
                    g.node_count()
                )));
            }
            if g.node_count() == 0 {
                return Err(Error::Shape(format!("graph {b} has no nodes")));
            }
            let inv = 1.0 / g.node_count() as f64;
            for v in 0..g.node_count() {
                agg.push((offset + v, offset + v, 1.0));
                pool.push((b, offset + v, inv));
                rows.push(f.row(v));
            }
            for &(u, v) in g.edges() {
                agg.push((offset + u, offset + v, 1.0));
                agg.push((offset + v, offset + u, 1.0));
            }
            offset += g.node_count();
        }
        Ok(Self {
            aggregate: Arc::new(SparseMatrix::from_triplets(total, total, agg)),
            pool: Arc::new(SparseMatrix::from_triplets(graphs.len(), total, pool)),
            features: DenseMatrix::vstack(&rows)?,
        })
    }

    /// Batch of graphs using their own feature matrices.
    pub fn from_graphs(graphs: &[&Graph]) -> Result<Self> {
        let features: Vec<&DenseMatrix> = graphs.iter().map(|g| g.features()).collect();
        Self::new(graphs, &features)
    }

    pub fn len(&self) -> usize {
        self.pool.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

impl GraphEncoderParams {
    pub fn new<R: Rng>(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let gin_layers = (0..GIN_LAYERS)
            .map(|l| {
                let first = if l == 0 { input_dim } else { hidden_dim };
                MlpParams::new(&[first, hidden_dim, hidden_dim], rng)
            })
            .collect();
        Self {
            gin_layers,
            projection: MlpParams::new(&[GIN_LAYERS * hidden_dim, output_dim, output_dim], rng),
            readout_norm: ReadoutNorm::identity(GIN_LAYERS * hidden_dim),
            input_dim,
            hidden_dim,
            frozen: false,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.projection.output_dim()
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.gin_layers.len() != GIN_LAYERS {
            return Err(Error::Shape(format!(
                "{} GIN layers, expected {GIN_LAYERS}",
                self.gin_layers.len()
            )));
        }
        let mut width = self.input_dim;
        for (l, mlp) in self.gin_layers.iter().enumerate() {
            mlp.check()?;
            if mlp.input_dim() != width || mlp.output_dim() != self.hidden_dim {
                return Err(Error::Shape(format!("GIN layer {l} does not chain")));
            }
            width = self.hidden_dim;
        }
        self.projection.check()?;
        let width = GIN_LAYERS * self.hidden_dim;
        if self.projection.input_dim() != width {
            return Err(Error::Shape("projection input does not match the readout".into()));
        }
        self.readout_norm.check(width)
    }

    pub(crate) fn from_named(
        named: &[(String, DenseMatrix)],
        input_dim: usize,
        hidden_dim: usize,
        frozen: bool,
    ) -> Result<Self> {
        let gin_layers = (0..GIN_LAYERS)
            .map(|l| mlp_from_named(&format!("gin.{l}"), named))
            .collect::<Result<Vec<_>>>()?;
        let params = Self {
            gin_layers,
            projection: mlp_from_named("projection", named)?,
            readout_norm: ReadoutNorm::from_named(named)?,
            input_dim,
            hidden_dim,
            frozen,
        };
        params.check().map_err(|e| Error::Format(e.to_string()))?;
        Ok(params)
    }
}

/// The GIN message-passing stack, bound to a tape.
#[derive(Debug, Clone)]
pub struct BoundGin {
    pub layers: Vec<BoundMlp>,
}

impl BoundGin {
    /// Concatenated per-layer mean pools, `B x (layers * hidden)`.
    pub fn readout(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Var> {
        let mut h = tape.constant(batch.features.clone());
        let mut pooled = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let agg = tape.sparse_mul(batch.aggregate.clone(), h)?;
            let z = layer.forward(tape, agg)?;
            h = tape.relu(z);
            pooled.push(tape.sparse_mul(batch.pool.clone(), h)?);
        }
        tape.concat_cols(&pooled)
    }
}

#[derive(Debug, Clone)]
pub struct BoundGraphEncoder {
    pub gin: BoundGin,
    pub projection: BoundMlp,
    pub readout_norm: BoundNorm,
}

impl BoundGraphEncoder {
    /// Graph embeddings, `B x output_dim`.
    pub fn forward(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Var> {
        let r = self.gin.readout(tape, batch)?;
        let r = self.readout_norm.forward(tape, r)?;
        self.projection.forward(tape, r)
    }

    /// Like [`forward`](Self::forward) but standardizing with the batch's
    /// own readout statistics.
    pub fn forward_batch_stats(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Var> {
        let r = self.gin.readout(tape, batch)?;
        let r = tape.standardize_cols(r, READOUT_EPS);
        self.projection.forward(tape, r)
    }
}

pub(crate) fn bind_gin(layers: &[MlpParams], tape: &mut Tape, binder: &mut Binder) -> BoundGin {
    BoundGin {
        layers: layers.iter().map(|m| m.bind(tape, binder)).collect(),
    }
}

impl Parameterized for GraphEncoderParams {
    type Bound = BoundGraphEncoder;

    fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> BoundGraphEncoder {
        let bind_all = |binder: &mut Binder, tape: &mut Tape| BoundGraphEncoder {
            gin: bind_gin(&self.gin_layers, tape, binder),
            projection: self.projection.bind(tape, binder),
            readout_norm: self.readout_norm.bind(tape),
        };
        if self.frozen {
            binder.frozen(|b| bind_all(b, tape))
        } else {
            bind_all(binder, tape)
        }
    }

    fn named_tensors(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = Vec::new();
        for (l, mlp) in self.gin_layers.iter().enumerate() {
            out.extend(prefixed(&format!("gin.{l}"), mlp.named_tensors()));
        }
        out.extend(prefixed("projection", self.projection.named_tensors()));
        out
    }

    fn named_buffers(&self) -> Vec<(String, &DenseMatrix)> {
        self.readout_norm.named()
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out: Vec<&mut DenseMatrix> = self.gin_layers.iter_mut().flat_map(|m| m.tensors_mut()).collect();
        out.extend(self.projection.tensors_mut());
        out
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }
}

/// Embeds one graph with the given node features.
pub fn gin_forward(params: &GraphEncoderParams, graph: &Graph, features: &DenseMatrix) -> Result<(Vec<f64>, Trace)> {
    params.check()?;
    if features.cols() != params.input_dim {
        return Err(Error::Shape(format!(
            "features have width {}, encoder expects {}",
            features.cols(),
            params.input_dim
        )));
    }
    let batch = GraphBatch::new(&[graph], &[features])?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, &mut Binder::new(!params.frozen));
    let output = bound.forward(&mut tape, &batch)?;
    let embedding = tape.value(output).row(0).to_vec();
    Ok((embedding, Trace { tape, output }))
}

/// Embeds many graphs with their own features, one row per graph.
pub fn encode_graphs(params: &GraphEncoderParams, graphs: &[&Graph]) -> Result<DenseMatrix> {
    let batch = GraphBatch::from_graphs(graphs)?;
    if batch.feature_dim() != params.input_dim {
        return Err(Error::Shape(format!(
            "features have width {}, encoder expects {}",
            batch.feature_dim(),
            params.input_dim
        )));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, &mut Binder::new(false));
    let out = bound.forward(&mut tape, &batch)?;
    Ok(tape.value(out).clone())
}
