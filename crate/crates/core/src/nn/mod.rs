//! Dense linear algebra, reverse-mode gradients, and the two encoders.

mod gin;
mod matrix;
mod mlp;
mod norm;
mod optim;
mod tape;
mod tree_encoder;
mod weights;

pub(crate) use gin::bind_gin;
pub use gin::{
    encode_graphs, gin_forward, BoundGin, BoundGraphEncoder, GraphBatch, GraphEncoderParams, DEFAULT_HIDDEN_DIM,
    GIN_LAYERS,
};
pub use matrix::{DenseMatrix, SparseMatrix};
pub(crate) use mlp::prefixed;
pub use mlp::{glorot, Binder, BoundLinear, BoundMlp, Linear, MlpParams, Parameterized};
pub use norm::{BoundNorm, ReadoutNorm, READOUT_EPS};
pub use optim::{loss_gradient, sgd_step, AdamState, Gradient};
pub use tape::{SlotGradients, Tape, Var};
pub use tree_encoder::{tree_forward, BoundTreeEncoder, TreeBatch, TreeEncoderParams};
pub use weights::{
    decode_weights, encode_weights, load_weights, save_weights, Manifest, ModelMeta, Persist, TensorEntry,
    FORMAT_VERSION, MAGIC,
};

/// The tape and output node of a forward pass, kept for gradient evaluation.
#[derive(Debug, Clone)]
pub struct Trace {
    pub tape: Tape,
    pub output: Var,
}
