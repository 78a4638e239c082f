//! End-to-end detection: pre-training, tree preprocessing, test-time
//! adaptation and scoring.

mod adapt;
mod config;
mod pretrain;
mod trees;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adapt::{test_time_adapt, Adaptation};
pub use config::{Objective, RunConfig, MAX_HEIGHT, MIN_HEIGHT};
pub use pretrain::{
    calibrate_readout, pretrain, pretrain_with_history, BoundPretrainModel, PretrainHistory, PretrainModel,
};
pub use trees::{cache_key, preprocess_trees, TreeSet};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphCollection, GraphJson};
use crate::nn::GraphEncoderParams;
use crate::tudataset::parse_tud_dataset;

/// Fraction of an ID dataset used for pre-training when splitting it.
pub const TRAIN_FRACTION: f64 = 0.9;

/// Loads a TUDataset directory, or a JSON file holding an array of graphs.
pub fn load_collection(path: impl AsRef<Path>) -> Result<GraphCollection> {
    let path = path.as_ref();
    if path.is_dir() {
        return parse_tud_dataset(path);
    }
    let text = fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    let json: Vec<GraphJson> = serde_json::from_str(&text)?;
    let graphs = json.iter().map(Graph::from_json).collect::<Result<Vec<_>>>()?;
    GraphCollection::new(graphs, None, path.display().to_string())
}

pub fn save_collection(collection: &GraphCollection, path: impl AsRef<Path>) -> Result<()> {
    let json: Vec<GraphJson> = collection.graphs().iter().map(Graph::to_json).collect();
    fs::write(path, serde_json::to_vec(&json)?)?;
    Ok(())
}

/// Seeded shuffle of `collection` into a training part of
/// `round(train_fraction * len)` graphs and the rest.
pub fn split_collection(
    collection: &GraphCollection,
    train_fraction: f64,
    seed: u64,
) -> Result<(GraphCollection, GraphCollection)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Parameter(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..collection.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_fraction * collection.len() as f64).round() as usize;
    Ok((collection.select(&order[..cut]), collection.select(&order[cut..])))
}

/// Scores ID and OOD test graphs together.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub adaptation: Adaptation,
    /// Index of each scored graph in `id_test` followed by `ood_test`.
    pub kept: Vec<usize>,
}

/// Runs tree preprocessing and test-time adaptation on the union of both
/// test sets and attaches ground truth (OOD = from `ood_test`) and the AUC.
pub fn detect(
    frozen: &GraphEncoderParams,
    config: &RunConfig,
    id_test: &GraphCollection,
    ood_test: &GraphCollection,
) -> Result<Detection> {
    config.validate()?;
    let width = id_test.feature_dim().max(ood_test.feature_dim());
    if width > frozen.input_dim {
        return Err(Error::Shape(format!(
            "test features have width {width}, the encoder was trained on {}",
            frozen.input_dim
        )));
    }
    let id = id_test.pad_features(frozen.input_dim)?;
    let ood = ood_test.pad_features(frozen.input_dim)?;
    let all = GraphCollection::concat(&[&id, &ood], "test");
    let trees = preprocess_trees(config, &all)?;
    let kept_graphs = all.select(&trees.kept);
    let is_ood: Vec<bool> = trees.kept.iter().map(|&i| i >= id.len()).collect();
    let mut adaptation = test_time_adapt(frozen, config, &kept_graphs, &trees.trees)?;
    adaptation.report = adaptation.report.with_labels(is_ood)?;
    Ok(Detection {
        adaptation,
        kept: trees.kept,
    })
}
