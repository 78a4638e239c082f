//! Test-time graph out-of-distribution detection with structural-entropy
//! coding trees.
//!
//! A frozen GIN encoder embeds each test graph, a trainable tree encoder
//! embeds the graph's coding tree, and the per-graph value of a contrastive
//! plus conditional-redundancy objective is the OOD score.

pub mod error;
pub mod eval;
pub mod generate;
pub mod graph;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod positional;
pub mod tree;
pub mod tudataset;

pub use error::{Error, Result};
pub use graph::{Graph, GraphCollection};
pub use tree::{build_coding_tree, structural_entropy, CodingTree};
