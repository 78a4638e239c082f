use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphCollection};
use crate::losses::{cri_loss_on_tape, info_nce_on_tape, pseudo_labels, ScoreReport};
use crate::nn::{
    encode_graphs, loss_gradient, sgd_step, AdamState, Binder, BoundTreeEncoder, DenseMatrix, GraphEncoderParams,
    Parameterized, ReadoutNorm, Tape, TreeBatch, TreeEncoderParams, Var,
};
use crate::tree::CodingTree;

use super::{Objective, RunConfig};

/// One fixed test batch: member indices, frozen embeddings and trees.
struct Batch {
    members: Vec<usize>,
    z: DenseMatrix,
    labels: Vec<usize>,
    trees: TreeBatch,
}

/// Shuffled chunks of `batch_size`; a trailing chunk of one joins its
/// predecessor.
fn batch_indices(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
        let last = chunks.pop().unwrap();
        chunks.last_mut().unwrap().extend(last);
    }
    chunks
}

/// Per-sample loss column for one batch. Training standardizes tree
/// readouts with batch statistics, scoring with the calibrated ones.
fn per_sample(
    tape: &mut Tape,
    bound: &BoundTreeEncoder,
    batch: &Batch,
    config: &RunConfig,
    training: bool,
) -> Result<Var> {
    let z = tape.constant(batch.z.clone());
    let zt = if training {
        bound.forward_batch_stats(tape, &batch.trees)?
    } else {
        bound.forward(tape, &batch.trees)?
    };
    let redundancy = |tape: &mut Tape| -> Result<Var> {
        let cri = cri_loss_on_tape(tape, z, zt, &batch.labels)?;
        Ok(tape.scale(cri, config.lambda))
    };
    match config.objective {
        Objective::Full => {
            let cl = info_nce_on_tape(tape, z, zt, config.tau)?;
            let cri = redundancy(tape)?;
            tape.add(cl, cri)
        }
        Objective::ContrastiveOnly => info_nce_on_tape(tape, z, zt, config.tau),
        Objective::RedundancyOnly => redundancy(tape),
    }
}

/// The adapted tree encoder, final scores and per-epoch mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub tree_encoder: TreeEncoderParams,
    pub report: ScoreReport,
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh tree encoder on the unlabeled test graphs against the
/// frozen graph encoder, fixes its readout statistics to those of all test
/// trees, then scores every graph by its loss.
///
/// `trees[i]` must be the coding tree of `test_graphs[i]`. Scores come back
/// in input order; higher means more likely out of distribution.
pub fn test_time_adapt(
    frozen: &GraphEncoderParams,
    config: &RunConfig,
    test_graphs: &GraphCollection,
    trees: &[CodingTree],
) -> Result<Adaptation> {
    config.validate()?;
    frozen.check()?;
    let graphs: Vec<&Graph> = test_graphs.graphs().iter().collect();
    if graphs.len() != trees.len() {
        return Err(Error::Shape(format!(
            "{} graphs but {} trees",
            graphs.len(),
            trees.len()
        )));
    }
    if graphs.is_empty() {
        return Err(Error::BatchSize("no test graphs".into()));
    }
    for (i, (g, t)) in graphs.iter().zip(trees).enumerate() {
        if g.node_count() != t.leaf_count() {
            return Err(Error::Structure(format!(
                "tree {i} has {} leaves for a graph of {} nodes",
                t.leaf_count(),
                g.node_count()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut encoder = TreeEncoderParams::new(
        frozen.input_dim,
        config.hidden_dim,
        frozen.output_dim(),
        config.k,
        &mut rng,
    );
    let batches = batch_indices(graphs.len(), config.batch_size, &mut rng)
        .into_iter()
        .map(|members| {
            let gs: Vec<&Graph> = members.iter().map(|&i| graphs[i]).collect();
            let ts: Vec<&CodingTree> = members.iter().map(|&i| &trees[i]).collect();
            let fs: Vec<&DenseMatrix> = gs.iter().map(|g| g.features()).collect();
            let z = encode_graphs(frozen, &gs)?;
            Ok(Batch {
                labels: pseudo_labels(&z),
                trees: TreeBatch::new(&ts, &fs, config.k)?,
                z,
                members,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut adam = AdamState::new(&encoder);
    let mut epoch_losses = Vec::with_capacity(config.epochs_testtime);
    for epoch in 0..config.epochs_testtime {
        let mut total = 0.0;
        for batch in &batches {
            let (loss, gradient) = loss_gradient(&encoder, |tape, bound| {
                let per = per_sample(tape, bound, batch, config, true)?;
                Ok(tape.mean(per))
            })?;
            sgd_step(&mut encoder, &gradient, &mut adam, config.lr)?;
            total += loss;
        }
        let mean = total / batches.len() as f64;
        log::info!("adaptation epoch {}: loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }

    let mut roots = Vec::with_capacity(graphs.len());
    for batch in &batches {
        let mut tape = Tape::new();
        let bound = encoder.bind(&mut tape, &mut Binder::new(false));
        let r = bound.root_states(&mut tape, &batch.trees)?;
        roots.push(tape.value(r).clone());
    }
    let rows: Vec<&[f64]> = roots
        .iter()
        .flat_map(|m| (0..m.rows()).map(move |i| m.row(i)))
        .collect();
    encoder.readout_norm = ReadoutNorm::fit(&DenseMatrix::vstack(&rows)?)?;

    let mut scores = vec![0.0; graphs.len()];
    for batch in &batches {
        let mut tape = Tape::new();
        let bound = encoder.bind(&mut tape, &mut Binder::new(false));
        let per = per_sample(&mut tape, &bound, batch, config, false)?;
        for (row, &i) in batch.members.iter().enumerate() {
            scores[i] = tape.value(per)[(row, 0)];
        }
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite OOD score".into()));
    }
    Ok(Adaptation {
        tree_encoder: encoder,
        report: ScoreReport::new(scores),
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_single_joins_previous() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = batch_indices(9, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let b = batch_indices(10, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
