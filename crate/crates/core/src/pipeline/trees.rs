use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphCollection};
use crate::tree::{build_coding_tree, CodingTree, TreeJson};

use super::RunConfig;

/// Trees for the graphs that could be encoded, with cache statistics.
#[derive(Debug, Clone)]
pub struct TreeSet {
    pub trees: Vec<CodingTree>,
    /// Index into the input collection of each tree.
    pub kept: Vec<usize>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

/// Hex digest identifying a graph's structure together with the height.
pub fn cache_key(graph: &Graph, k: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update((graph.node_count() as u64).to_le_bytes());
    hasher.update((k as u64).to_le_bytes());
    let mut edges: Vec<(usize, usize)> = graph.edges().iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
    edges.sort_unstable();
    for (u, v) in edges {
        hasher.update((u as u64).to_le_bytes());
        hasher.update((v as u64).to_le_bytes());
    }
    format!("{:x}", hasher.finalize())
}

fn cache_path(dir: &Path, graph: &Graph, k: usize) -> PathBuf {
    dir.join(format!("{}.json", cache_key(graph, k)))
}

fn read_cached(path: &Path) -> Option<CodingTree> {
    let text = fs::read_to_string(path).ok()?;
    match serde_json::from_str::<TreeJson>(&text)
        .map_err(Error::from)
        .and_then(|j| CodingTree::from_json(&j))
    {
        Ok(tree) => Some(tree),
        Err(e) => {
            log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
            None
        }
    }
}

/// Builds one height-`k` coding tree per graph, in parallel, reusing
/// trees cached under `config.cache_dir`. Edgeless graphs have no tree and
/// are skipped with a warning.
pub fn preprocess_trees(config: &RunConfig, graphs: &GraphCollection) -> Result<TreeSet> {
    config.validate()?;
    if let Some(dir) = &config.cache_dir {
        fs::create_dir_all(dir)?;
    }
    let hits = AtomicUsize::new(0);
    let misses = AtomicUsize::new(0);
    let built: Vec<Option<CodingTree>> = graphs
        .graphs()
        .par_iter()
        .enumerate()
        .map(|(i, graph)| {
            if graph.edge_count() == 0 {
                log::warn!("graph {i} has no edges; skipping it");
                return Ok(None);
            }
            let path = config.cache_dir.as_deref().map(|d| cache_path(d, graph, config.k));
            if let Some(tree) = path.as_deref().and_then(read_cached) {
                if tree.leaf_count() == graph.node_count() {
                    hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(Some(tree));
                }
            }
            misses.fetch_add(1, Ordering::Relaxed);
            let tree = build_coding_tree(graph, config.k)?;
            if let Some(path) = path {
                fs::write(&path, serde_json::to_vec(&tree.to_json())?)?;
            }
            Ok(Some(tree))
        })
        .collect::<Result<_>>()?;

    let mut set = TreeSet {
        trees: Vec::with_capacity(built.len()),
        kept: Vec::with_capacity(built.len()),
        cache_hits: hits.into_inner(),
        cache_misses: misses.into_inner(),
    };
    for (i, tree) in built.into_iter().enumerate() {
        if let Some(tree) = tree {
            set.trees.push(tree);
            set.kept.push(i);
        }
    }
    Ok(set)
}
