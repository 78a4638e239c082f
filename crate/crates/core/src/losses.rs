//! Contrastive and conditional-redundancy objectives.
//!
//! Each loss comes in two forms: a plain evaluation over [`DenseMatrix`]
//! embeddings, and a tape form used during training. Both return the
//! per-sample decomposition whose mean is the scalar loss.

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseMatrix, Tape, Var};

pub const DEFAULT_TAU: f64 = 0.2;
pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Parameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Parameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// A scalar loss with its per-sample decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub value: f64,
    pub per_sample: Vec<f64>,
}

impl LossTerms {
    fn from_per_sample(per_sample: Vec<f64>) -> Self {
        let value = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
        Self { value, per_sample }
    }
}

/// Per-graph OOD scores; higher means more likely out of distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scores: Vec<f64>,
    #[serde(default, with = "bool_ints", skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

mod bool_ints {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<bool>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => s.collect_seq(v.iter().map(|&b| b as u8)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<bool>>, D::Error> {
        let raw: Option<Vec<u8>> = Option::deserialize(d)?;
        raw.map(|v| {
            v.into_iter()
                .map(|x| match x {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {other}"))),
                })
                .collect()
        })
        .transpose()
    }
}

impl ScoreReport {
    pub fn new(scores: Vec<f64>) -> Self {
        Self {
            scores,
            labels: None,
            auc: None,
        }
    }

    /// Attaches ground truth and computes the AUC.
    pub fn with_labels(mut self, is_ood: Vec<bool>) -> Result<Self> {
        self.auc = Some(crate::eval::auc(&self.scores, &is_ood)?);
        self.labels = Some(is_ood);
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(s)?;
        if let Some(labels) = &report.labels {
            if labels.len() != report.scores.len() {
                return Err(Error::Format(format!(
                    "{} labels for {} scores",
                    labels.len(),
                    report.scores.len()
                )));
            }
        }
        Ok(report)
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine similarity of vectors with different lengths");
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        warn!("cosine similarity with a zero vector, treated as 0");
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn check_pair(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "views have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Contrastive loss with positives across views and negatives drawn from
/// the `z_alpha` view only.
pub fn info_nce(z_alpha: &DenseMatrix, z_beta: &DenseMatrix, tau: f64) -> Result<LossTerms> {
    check_pair(z_alpha, z_beta)?;
    let n = z_alpha.rows();
    if n < 2 {
        return Err(Error::BatchSize(format!(
            "contrastive loss needs at least 2 samples, got {n}"
        )));
    }
    let per_sample = (0..n)
        .map(|i| {
            let a = z_alpha.row(i);
            let pos = cosine_similarity(a, z_beta.row(i)) / tau;
            let negs = (0..n)
                .filter(move |&j| j != i)
                .map(move |j| cosine_similarity(a, z_alpha.row(j)) / tau);
            log_sum_exp(negs) - pos
        })
        .collect();
    Ok(LossTerms::from_per_sample(per_sample))
}

/// Index of the largest coordinate of each row, lowest index on ties.
pub fn pseudo_labels(z: &DenseMatrix) -> Vec<usize> {
    (0..z.rows())
        .map(|i| {
            let row = z.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Negative pool for each anchor: same label, anchor excluded. Anchors
/// alone in their group use the whole batch minus themselves, and a batch
/// of one uses the anchor itself.
pub fn negative_pools(labels: &[usize]) -> Vec<Vec<usize>> {
    let n = labels.len();
    (0..n)
        .map(|i| {
            let same: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if !same.is_empty() {
                same
            } else if n > 1 {
                (0..n).filter(|&j| j != i).collect()
            } else {
                vec![i]
            }
        })
        .collect()
}

/// Conditional redundancy term over graph embeddings `z_graph` and tree
/// embeddings `z_tree` grouped by `labels`.
pub fn cri_loss(z_graph: &DenseMatrix, z_tree: &DenseMatrix, labels: &[usize], epsilon: f64) -> Result<LossTerms> {
    check_pair(z_graph, z_tree)?;
    let n = z_graph.rows();
    if n == 0 {
        return Err(Error::BatchSize("conditional redundancy loss on an empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    let pools = negative_pools(labels);
    let per_sample = (0..n)
        .map(|i| {
            let t = z_tree.row(i);
            let pos = cosine_similarity(z_graph.row(i), t);
            let pool = &pools[i];
            let mean = pool
                .iter()
                .map(|&j| cosine_similarity(z_graph.row(j), t).exp())
                .sum::<f64>()
                / pool.len() as f64;
            pos - mean.max(epsilon).ln()
        })
        .collect();
    Ok(LossTerms::from_per_sample(per_sample))
}

pub fn total_loss(l_cl: &LossTerms, l_cri: &LossTerms, lambda: f64) -> Result<LossTerms> {
    if l_cl.per_sample.len() != l_cri.per_sample.len() {
        return Err(Error::Shape(format!(
            "{} contrastive terms against {} redundancy terms",
            l_cl.per_sample.len(),
            l_cri.per_sample.len()
        )));
    }
    let per_sample = l_cl
        .per_sample
        .iter()
        .zip(&l_cri.per_sample)
        .map(|(a, b)| a + lambda * b)
        .collect();
    Ok(LossTerms {
        value: l_cl.value + lambda * l_cri.value,
        per_sample,
    })
}

/// Tape form of [`info_nce`]; returns the per-sample column.
pub fn info_nce_on_tape(tape: &mut Tape, z_alpha: Var, z_beta: Var, tau: f64) -> Result<Var> {
    let n = tape.value(z_alpha).rows();
    if n < 2 {
        return Err(Error::BatchSize(format!(
            "contrastive loss needs at least 2 samples, got {n}"
        )));
    }
    let a = tape.row_normalize(z_alpha);
    let b = tape.row_normalize(z_beta);
    let bt = tape.transpose(b);
    let cross = tape.matmul(a, bt)?;
    let pos = tape.diag(cross)?;
    let pos = tape.scale(pos, 1.0 / tau);
    let at = tape.transpose(a);
    let within = tape.matmul(a, at)?;
    let pools: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
    let neg = tape.log_sum_exp(within, Arc::new(pools), 1.0 / tau, false)?;
    let per = tape.sub(neg, pos)?;
    Ok(tape.label(per, "info_nce"))
}

/// Tape form of [`cri_loss`]; returns the per-sample column.
pub fn cri_loss_on_tape(tape: &mut Tape, z_graph: Var, z_tree: Var, labels: &[usize]) -> Result<Var> {
    let n = tape.value(z_graph).rows();
    if n == 0 {
        return Err(Error::BatchSize("conditional redundancy loss on an empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    let g = tape.row_normalize(z_graph);
    let t = tape.row_normalize(z_tree);
    let gt = tape.transpose(g);
    // row i, column j: sim(z_graph_j, z_tree_i)
    let sims = tape.matmul(t, gt)?;
    let pos = tape.diag(sims)?;
    // mean of e^sim is at least e^-1, so the log floor never applies here
    let neg = tape.log_sum_exp(sims, Arc::new(negative_pools(labels)), 1.0, true)?;
    let per = tape.sub(pos, neg)?;
    Ok(tape.label(per, "cri_loss"))
}
