use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphCollection};
use crate::losses::info_nce_on_tape;
use crate::nn::{
    bind_gin, loss_gradient, prefixed, sgd_step, AdamState, Binder, BoundGin, BoundGraphEncoder, DenseMatrix,
    GraphBatch, GraphEncoderParams, MlpParams, Parameterized, ReadoutNorm, Tape, Var, GIN_LAYERS, READOUT_EPS,
};
use crate::positional::augmented_view;

use super::RunConfig;

/// The encoder being pre-trained plus a second GIN stack that reads the
/// positional view. Both stacks share the projection head; only the basic
/// encoder is kept afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainModel {
    pub basic: GraphEncoderParams,
    pub positional: Vec<MlpParams>,
}

#[derive(Debug, Clone)]
pub struct BoundPretrainModel {
    pub basic: BoundGraphEncoder,
    pub positional: BoundGin,
}

impl BoundPretrainModel {
    /// Positional-view embeddings, standardized with batch statistics.
    pub fn forward_positional(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Var> {
        let r = self.positional.readout(tape, batch)?;
        let r = tape.standardize_cols(r, READOUT_EPS);
        self.basic.projection.forward(tape, r)
    }
}

impl PretrainModel {
    pub fn new(config: &RunConfig, input_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let basic = GraphEncoderParams::new(input_dim, config.hidden_dim, config.output_dim, rng);
        let positional = (0..GIN_LAYERS)
            .map(|l| {
                let first = if l == 0 {
                    config.walk_length + 1
                } else {
                    config.hidden_dim
                };
                MlpParams::new(&[first, config.hidden_dim, config.hidden_dim], rng)
            })
            .collect();
        Self { basic, positional }
    }
}

impl Parameterized for PretrainModel {
    type Bound = BoundPretrainModel;

    fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> BoundPretrainModel {
        BoundPretrainModel {
            basic: self.basic.bind(tape, binder),
            positional: bind_gin(&self.positional, tape, binder),
        }
    }

    fn named_tensors(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = self.basic.named_tensors();
        for (l, mlp) in self.positional.iter().enumerate() {
            out.extend(prefixed(&format!("positional.gin.{l}"), mlp.named_tensors()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = self.basic.tensors_mut();
        out.extend(self.positional.iter_mut().flat_map(|m| m.tensors_mut()));
        out
    }

    fn is_frozen(&self) -> bool {
        self.basic.frozen
    }
}

/// Mean contrastive loss of every epoch, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainHistory {
    pub epoch_losses: Vec<f64>,
}

pub fn pretrain(config: &RunConfig, id_train: &GraphCollection) -> Result<GraphEncoderParams> {
    Ok(pretrain_with_history(config, id_train)?.0)
}

/// Trains the graph encoder to agree between the basic and positional views
/// and returns it frozen.
pub fn pretrain_with_history(
    config: &RunConfig,
    id_train: &GraphCollection,
) -> Result<(GraphEncoderParams, PretrainHistory)> {
    config.validate()?;
    if id_train.is_empty() {
        return Err(Error::Parameter("pre-training needs at least one graph".into()));
    }
    let train = id_train.pad_features(id_train.feature_dim())?;
    let graphs: Vec<&Graph> = train.graphs().iter().collect();
    let views = graphs
        .iter()
        .map(|g| Ok(augmented_view(g, config.walk_length)?.combined))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = PretrainModel::new(config, train.feature_dim(), &mut rng);
    let mut adam = AdamState::new(&model);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs_pretrain);

    for epoch in 0..config.epochs_pretrain {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                log::debug!("epoch {epoch}: skipping a batch of one");
                continue;
            }
            let members: Vec<&Graph> = chunk.iter().map(|&i| graphs[i]).collect();
            let positional: Vec<&DenseMatrix> = chunk.iter().map(|&i| &views[i]).collect();
            let basic_batch = GraphBatch::from_graphs(&members)?;
            let positional_batch = GraphBatch::new(&members, &positional)?;
            let (loss, gradient) = loss_gradient(&model, |tape, bound| {
                let za = bound.basic.forward_batch_stats(tape, &basic_batch)?;
                let zb = bound.forward_positional(tape, &positional_batch)?;
                let per = info_nce_on_tape(tape, za, zb, config.tau)?;
                Ok(tape.mean(per))
            })?;
            sgd_step(&mut model, &gradient, &mut adam, config.lr)?;
            total += loss;
            batches += 1;
        }
        let mean = if batches == 0 { f64::NAN } else { total / batches as f64 };
        log::info!("pretrain epoch {}: loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    let mut basic = model.basic;
    calibrate_readout(&mut basic, &graphs, config.batch_size)?;
    Ok((basic.freeze(), PretrainHistory { epoch_losses }))
}

/// Fixes the encoder's readout statistics to those of `graphs`.
pub fn calibrate_readout(params: &mut GraphEncoderParams, graphs: &[&Graph], chunk: usize) -> Result<()> {
    let mut rows = Vec::with_capacity(graphs.len());
    for part in graphs.chunks(chunk.max(1)) {
        let batch = GraphBatch::from_graphs(part)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, &mut Binder::new(false));
        let r = bound.gin.readout(&mut tape, &batch)?;
        rows.push(tape.value(r).clone());
    }
    let all: Vec<&[f64]> = rows.iter().flat_map(|m| (0..m.rows()).map(move |i| m.row(i))).collect();
    params.readout_norm = ReadoutNorm::fit(&DenseMatrix::vstack(&all)?)?;
    Ok(())
}
