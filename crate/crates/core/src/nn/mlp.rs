use rand::Rng;

use crate::error::{Error, Result};

use super::matrix::DenseMatrix;
use super::tape::{Tape, Var};

/// Assigns parameter slots in a fixed traversal order while binding
/// parameters onto a tape.
#[derive(Debug)]
pub struct Binder {
    next_slot: usize,
    trainable: bool,
}

impl Binder {
    pub fn new(trainable: bool) -> Self {
        Self {
            next_slot: 0,
            trainable,
        }
    }

    /// Binds one tensor, as a parameter if trainable and a constant otherwise.
    /// Slots advance either way so gradients stay aligned with tensor order.
    pub fn bind(&mut self, tape: &mut Tape, value: &DenseMatrix) -> Var {
        let slot = self.next_slot;
        self.next_slot += 1;
        if self.trainable {
            tape.param(slot, value.clone())
        } else {
            tape.constant(value.clone())
        }
    }

    /// Runs `f` with trainability forced off, e.g. for a frozen sub-module.
    pub fn frozen<T>(&mut self, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = self.trainable;
        self.trainable = false;
        let out = f(self);
        self.trainable = saved;
        out
    }

    pub fn slots_used(&self) -> usize {
        self.next_slot
    }
}

/// A collection of tensors that can be placed on a tape and updated.
pub trait Parameterized {
    type Bound;

    fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> Self::Bound;

    /// Tensors in slot order, with stable names.
    fn named_tensors(&self) -> Vec<(String, &DenseMatrix)>;

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix>;

    /// Fixed tensors that are saved with the weights but never optimized.
    fn named_buffers(&self) -> Vec<(String, &DenseMatrix)> {
        Vec::new()
    }

    fn is_frozen(&self) -> bool {
        false
    }
}

/// Xavier/Glorot uniform initialization.
pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> DenseMatrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..=a)).collect();
    DenseMatrix::from_vec(fan_in, fan_out, data).unwrap()
}

/// `x W + b` with `W` of shape `in x out` and `b` of shape `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

impl Linear {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: glorot(input, output, rng),
            bias: DenseMatrix::zeros(1, output),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: DenseMatrix::identity(dim),
            bias: DenseMatrix::zeros(1, dim),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(input, output),
            bias: DenseMatrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.add_bias(y, self.bias)
    }
}

impl Parameterized for Linear {
    type Bound = BoundLinear;

    fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> BoundLinear {
        BoundLinear {
            weight: binder.bind(tape, &self.weight),
            bias: binder.bind(tape, &self.bias),
        }
    }

    fn named_tensors(&self) -> Vec<(String, &DenseMatrix)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Stack of linear layers with a rectifier between consecutive layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
}

impl MlpParams {
    /// Randomly initialized MLP through the given widths, e.g. `[in, hidden, out]`.
    pub fn new<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect(),
        }
    }

    pub fn identity(dim: usize, depth: usize) -> Self {
        Self {
            layers: (0..depth).map(|_| Linear::identity(dim)).collect(),
        }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("MLP without layers".into()));
        }
        for w in self.layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Shape(format!(
                    "MLP layer widths {} and {} do not chain",
                    w[0].output_dim(),
                    w[1].input_dim()
                )));
            }
        }
        Ok(())
    }

    /// Plain evaluation without a tape.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = h.map(|v| v.max(0.0));
            }
            let mut y = h.matmul(&layer.weight)?;
            for r in 0..y.rows() {
                for (o, &b) in y.row_mut(r).iter_mut().zip(layer.bias.row(0)) {
                    *o += b;
                }
            }
            h = y;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = layer.forward(tape, h)?;
        }
        Ok(h)
    }
}

impl Parameterized for MlpParams {
    type Bound = BoundMlp;

    fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape, binder)).collect(),
        }
    }

    fn named_tensors(&self) -> Vec<(String, &DenseMatrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.named_tensors()
                    .into_iter()
                    .map(move |(name, t)| (format!("{i}.{name}"), t))
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.layers.iter_mut().flat_map(Linear::tensors_mut).collect()
    }
}

/// Prefixes every tensor name with `prefix.`.
pub(crate) fn prefixed<'a>(prefix: &str, tensors: Vec<(String, &'a DenseMatrix)>) -> Vec<(String, &'a DenseMatrix)> {
    tensors.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

/// Rebuilds an MLP from `prefix.{layer}.weight` / `prefix.{layer}.bias` entries.
pub(crate) fn mlp_from_named(prefix: &str, named: &[(String, DenseMatrix)]) -> Result<MlpParams> {
    let mut layers = Vec::new();
    loop {
        let i = layers.len();
        let find = |suffix: &str| {
            let key = format!("{prefix}.{i}.{suffix}");
            named.iter().find(|(n, _)| *n == key).map(|(_, t)| t.clone())
        };
        match (find("weight"), find("bias")) {
            (Some(weight), Some(bias)) => layers.push(Linear { weight, bias }),
            (None, None) => break,
            _ => return Err(Error::Format(format!("{prefix}.{i} is missing its weight or bias"))),
        }
    }
    let mlp = MlpParams { layers };
    mlp.check().map_err(|e| Error::Format(format!("{prefix}: {e}")))?;
    Ok(mlp)
}
