//! Reverse-mode differentiation over dense matrices.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated; calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and
//! accumulates adjoints. Parameters are registered with a slot number so the
//! caller can collect their gradients in a fixed order.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::matrix::{DenseMatrix, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SparseMul(Arc<SparseMatrix>, Var),
    ConcatCols(Vec<Var>),
    RowNormalize(Var),
    Diag(Var),
    LogSumExp {
        src: Var,
        pools: Arc<Vec<Vec<usize>>>,
        scale: f64,
    },
    Mean(Var),
    StandardizeCols {
        src: Var,
        inv_std: Vec<f64>,
    },
    ScaleCols(Var, Arc<Vec<f64>>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::SparseMul(..) => "sparse_mul",
            Op::ConcatCols(_) => "concat_cols",
            Op::RowNormalize(_) => "row_normalize",
            Op::Diag(_) => "diag",
            Op::LogSumExp { .. } => "log_sum_exp",
            Op::Mean(_) => "mean",
            Op::StandardizeCols { .. } => "standardize_cols",
            Op::ScaleCols(..) => "scale_cols",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: DenseMatrix,
    op: Op,
    label: Option<&'static str>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, usize)>,
}

/// Gradients of a scalar with respect to the registered parameter slots.
#[derive(Debug, Clone)]
pub struct SlotGradients {
    slots: Vec<Option<DenseMatrix>>,
}

impl SlotGradients {
    /// Gradient of slot `i`, or `None` if the slot was never used.
    pub fn get(&self, slot: usize) -> Option<&DenseMatrix> {
        self.slots.get(slot).and_then(Option::as_ref)
    }

    pub fn into_slots(self) -> Vec<Option<DenseMatrix>> {
        self.slots
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op, label: None });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    /// Attaches a name to a node, reported if it turns non-finite.
    pub fn label(&mut self, v: Var, label: &'static str) -> Var {
        self.nodes[v.0].label = Some(label);
        v
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Input)
    }

    /// A differentiable leaf whose gradient is reported under `slot`.
    pub fn param(&mut self, slot: usize, value: DenseMatrix) -> Var {
        let v = self.push(value, Op::Input);
        self.params.push((v, slot));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    /// `a + 1 * bias` with `bias` a single row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} does not fit input {:?}",
                b.shape(),
                x.shape()
            )));
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for (o, &bb) in value.row_mut(i).iter_mut().zip(b.row(0)) {
                *o += bb;
            }
        }
        Ok(self.push(value, Op::AddBias(a, bias)))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(&self.value(b).scale(-1.0));
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// `s * a` for a constant sparse `s`.
    pub fn sparse_mul(&mut self, s: Arc<SparseMatrix>, a: Var) -> Result<Var> {
        let value = s.mul_dense(self.value(a))?;
        Ok(self.push(value, Op::SparseMul(s, a)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&DenseMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = DenseMatrix::hcat(&values)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Scales every row to unit L2 norm; all-zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        self.push(value, Op::RowNormalize(a))
    }

    /// Diagonal of a square matrix as a column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() != m.cols() {
            return Err(Error::Shape(format!("diag of non-square {:?}", m.shape())));
        }
        let value = DenseMatrix::from_vec(m.rows(), 1, (0..m.rows()).map(|i| m[(i, i)]).collect())?;
        Ok(self.push(value, Op::Diag(a)))
    }

    /// Column whose row `i` is `log sum_{j in pools[i]} exp(scale * a[i, j])`,
    /// or the log of the mean instead of the sum when `mean` is set.
    /// Stabilized by subtracting the row maximum.
    pub fn log_sum_exp(&mut self, a: Var, pools: Arc<Vec<Vec<usize>>>, scale: f64, mean: bool) -> Result<Var> {
        let m = self.value(a);
        if pools.len() != m.rows() {
            return Err(Error::Shape(format!("{} pools for {} rows", pools.len(), m.rows())));
        }
        let mut out = Vec::with_capacity(m.rows());
        for (i, pool) in pools.iter().enumerate() {
            if pool.is_empty() {
                return Err(Error::BatchSize(format!("row {i} has an empty pool")));
            }
            let row = m.row(i);
            let max = pool.iter().map(|&j| scale * row[j]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = pool.iter().map(|&j| (scale * row[j] - max).exp()).sum();
            let mut v = max + sum.ln();
            if mean {
                v -= (pool.len() as f64).ln();
            }
            out.push(v);
        }
        let value = DenseMatrix::from_vec(out.len(), 1, out)?;
        Ok(self.push(value, Op::LogSumExp { src: a, pools, scale }))
    }

    /// Mean of all entries as a 1x1 node.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let len = m.data().len().max(1) as f64;
        let value = DenseMatrix::filled(1, 1, m.data().iter().sum::<f64>() / len);
        self.push(value, Op::Mean(a))
    }

    /// Shifts and scales every column to zero mean and unit variance over the
    /// rows, with `eps` added to the (biased) variance.
    pub fn standardize_cols(&mut self, a: Var, eps: f64) -> Var {
        let (mean, var) = column_moments(self.value(a));
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            for (c, x) in value.row_mut(r).iter_mut().enumerate() {
                *x = (*x - mean[c]) * inv_std[c];
            }
        }
        self.push(value, Op::StandardizeCols { src: a, inv_std })
    }

    /// Multiplies column `c` by the constant `factors[c]`.
    pub fn scale_cols(&mut self, a: Var, factors: Arc<Vec<f64>>) -> Result<Var> {
        let mut value = self.value(a).clone();
        if factors.len() != value.cols() {
            return Err(Error::Shape(format!(
                "{} factors for {} columns",
                factors.len(),
                value.cols()
            )));
        }
        for r in 0..value.rows() {
            value
                .row_mut(r)
                .iter_mut()
                .zip(factors.iter())
                .for_each(|(x, f)| *x *= f);
        }
        Ok(self.push(value, Op::ScaleCols(a, factors)))
    }

    /// First node (in evaluation order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| match n.label {
                Some(label) => format!("{label} (node {i}, {})", n.op.name()),
                None => format!("node {i} ({})", n.op.name()),
            })
    }

    /// Gradients of the scalar `loss` with respect to every registered parameter.
    pub fn backward(&self, loss: Var) -> Result<SlotGradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.scalar(loss).is_finite() {
            let culprit = self.first_non_finite().unwrap_or_else(|| "loss".into());
            return Err(Error::Numeric(format!("non-finite loss; first bad term: {culprit}")));
        }
        let mut adj: Vec<Option<DenseMatrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(*b).transpose())?;
                    let db = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()),
                Op::AddBias(a, bias) => {
                    let mut db = DenseMatrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut adj, *bias, db);
                    accumulate(&mut adj, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0));
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, factor) => accumulate(&mut adj, *a, g.scale(*factor)),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (o, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::SparseMul(s, a) => accumulate(&mut adj, *a, s.transpose_mul_dense(&g)),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let mut d = DenseMatrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut adj, p, d);
                    }
                }
                Op::RowNormalize(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut d = DenseMatrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                            *o = (gv - yv * dot) / norm;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::Diag(a) => {
                    let n = g.rows();
                    let mut d = DenseMatrix::zeros(n, n);
                    for r in 0..n {
                        d[(r, r)] = g[(r, 0)];
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::LogSumExp { src, pools, scale, .. } => {
                    let m = self.value(*src);
                    let mut d = DenseMatrix::zeros(m.rows(), m.cols());
                    for (r, pool) in pools.iter().enumerate() {
                        let row = m.row(r);
                        let max = pool.iter().map(|&j| scale * row[j]).fold(f64::NEG_INFINITY, f64::max);
                        let weights: Vec<f64> = pool.iter().map(|&j| (scale * row[j] - max).exp()).collect();
                        let total: f64 = weights.iter().sum();
                        for (&j, w) in pool.iter().zip(weights) {
                            d[(r, j)] += g[(r, 0)] * scale * w / total;
                        }
                    }
                    accumulate(&mut adj, *src, d);
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let len = x.data().len().max(1) as f64;
                    accumulate(&mut adj, *a, DenseMatrix::filled(x.rows(), x.cols(), g[(0, 0)] / len));
                }
                Op::StandardizeCols { src, inv_std } => {
                    // dx = inv_std * (g - mean(g) - y * mean(g * y)) per column
                    let y = &node.value;
                    let n = y.rows() as f64;
                    let mut g_mean = vec![0.0; y.cols()];
                    let mut gy_mean = vec![0.0; y.cols()];
                    for r in 0..y.rows() {
                        for c in 0..y.cols() {
                            g_mean[c] += g[(r, c)] / n;
                            gy_mean[c] += g[(r, c)] * y[(r, c)] / n;
                        }
                    }
                    let mut d = DenseMatrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        for c in 0..y.cols() {
                            d[(r, c)] = inv_std[c] * (g[(r, c)] - g_mean[c] - y[(r, c)] * gy_mean[c]);
                        }
                    }
                    accumulate(&mut adj, *src, d);
                }
                Op::ScaleCols(a, factors) => {
                    let mut d = g;
                    for r in 0..d.rows() {
                        d.row_mut(r).iter_mut().zip(factors.iter()).for_each(|(x, f)| *x *= f);
                    }
                    accumulate(&mut adj, *a, d);
                }
            }
        }

        let slot_count = self.params.iter().map(|(_, s)| s + 1).max().unwrap_or(0);
        let mut slots: Vec<Option<DenseMatrix>> = vec![None; slot_count];
        for &(var, slot) in &self.params {
            if var.0 > loss.0 {
                continue;
            }
            let g = adj[var.0]
                .clone()
                .unwrap_or_else(|| DenseMatrix::zeros(self.value(var).rows(), self.value(var).cols()));
            match &mut slots[slot] {
                Some(acc) => acc.add_assign(&g),
                s @ None => *s = Some(g),
            }
        }
        Ok(SlotGradients { slots })
    }
}

/// Per-column mean and biased variance.
pub(crate) fn column_moments(m: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows().max(1) as f64;
    let mut mean = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        mean.iter_mut().zip(m.row(r)).for_each(|(a, x)| *a += x / n);
    }
    let mut var = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for ((v, x), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
            *v += (x - mu) * (x - mu) / n;
        }
    }
    (mean, var)
}

fn accumulate(adj: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&DenseMatrix) -> f64, x: &DenseMatrix) -> DenseMatrix {
        let h = 1e-6;
        let mut g = DenseMatrix::zeros(x.rows(), x.cols());
        for i in 0..x.data().len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn sample() -> DenseMatrix {
        DenseMatrix::from_rows(&[vec![0.3, -1.2, 0.5], vec![0.9, 0.1, -0.4], vec![-0.7, 0.8, 0.2]]).unwrap()
    }

    fn pipeline(tape: &mut Tape, x: Var) -> Var {
        let n = tape.row_normalize(x);
        let t = tape.transpose(n);
        let s = tape.matmul(n, t).unwrap();
        let pools = Arc::new(vec![vec![1, 2], vec![0, 2], vec![0, 1]]);
        let l = tape.log_sum_exp(s, pools, 2.0, true).unwrap();
        let d = tape.diag(s).unwrap();
        let r = tape.relu(x);
        let rs = tape.mean(r);
        let diff = tape.sub(l, d).unwrap();
        let m = tape.mean(diff);
        tape.add(m, rs).unwrap()
    }

    #[test]
    fn composite_matches_finite_differences() {
        let x0 = sample();
        let f = |x: &DenseMatrix| {
            let mut tape = Tape::new();
            let v = tape.constant(x.clone());
            let out = pipeline(&mut tape, v);
            tape.scalar(out)
        };
        let mut tape = Tape::new();
        let x = tape.param(0, x0.clone());
        let out = pipeline(&mut tape, x);
        let analytic = tape.backward(out).unwrap();
        let numeric = numeric_grad(f, &x0);
        for (a, n) in analytic.get(0).unwrap().data().iter().zip(numeric.data()) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
    }

    #[test]
    fn standardize_matches_finite_differences() {
        let factors = Arc::new(vec![0.5, -2.0, 1.5]);
        let build = |tape: &mut Tape, x: Var| {
            let s = tape.standardize_cols(x, 1e-5);
            let s = tape.scale_cols(s, factors.clone()).unwrap();
            // a non-symmetric readout so the gradient is not trivially zero
            let n = tape.row_normalize(s);
            let d = tape.diag(n).unwrap();
            let r = tape.relu(d);
            tape.mean(r)
        };
        let x0 = sample();
        let f = |x: &DenseMatrix| {
            let mut tape = Tape::new();
            let v = tape.constant(x.clone());
            let out = build(&mut tape, v);
            tape.scalar(out)
        };
        let mut tape = Tape::new();
        let x = tape.param(0, x0.clone());
        let out = build(&mut tape, x);
        let analytic = tape.backward(out).unwrap();
        let numeric = numeric_grad(f, &x0);
        for (a, n) in analytic.get(0).unwrap().data().iter().zip(numeric.data()) {
            assert!((a - n).abs() < 1e-6, "{a} vs {n}");
        }
        let s = {
            let mut tape = Tape::new();
            let v = tape.constant(x0.clone());
            let s = tape.standardize_cols(v, 0.0);
            tape.value(s).clone()
        };
        let (mean, var) = column_moments(&s);
        assert!(mean.iter().all(|m| m.abs() < 1e-12));
        assert!(var.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(0, sample());
        let c = tape.constant(DenseMatrix::filled(1, 1, 3.0));
        let _unused = tape.relu(p);
        let g = tape.backward(c).unwrap();
        assert!(g.get(0).map_or(true, |g| g.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn non_finite_loss_names_the_term() {
        let mut tape = Tape::new();
        let x = tape.constant(DenseMatrix::filled(1, 1, f64::INFINITY));
        let x = tape.label(x, "bad input");
        let s = tape.scale(x, 2.0);
        let err = tape.backward(s).unwrap_err().to_string();
        assert!(err.contains("bad input"), "{err}");
    }
}
