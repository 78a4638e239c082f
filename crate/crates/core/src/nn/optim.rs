use crate::error::{Error, Result};

use super::matrix::DenseMatrix;
use super::mlp::{Binder, Parameterized};
use super::tape::{Tape, Var};

/// Gradient congruent with `Parameterized::named_tensors` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub tensors: Vec<DenseMatrix>,
}

impl Gradient {
    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(DenseMatrix::is_finite)
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Evaluates `loss` with `params` bound as trainable and returns the loss
/// value together with its exact gradient.
///
/// The closure builds the scalar on the provided tape from the bound
/// parameters; anything else it places on the tape is treated as constant.
pub fn loss_gradient<P, F>(params: &P, loss: F) -> Result<(f64, Gradient)>
where
    P: Parameterized,
    F: FnOnce(&mut Tape, &P::Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, &mut Binder::new(true));
    let out = loss(&mut tape, &bound)?;
    let slots = tape.backward(out)?;
    let value = tape.scalar(out);
    let tensors = params
        .named_tensors()
        .into_iter()
        .enumerate()
        .map(|(i, (_, t))| {
            slots
                .get(i)
                .cloned()
                .unwrap_or_else(|| DenseMatrix::zeros(t.rows(), t.cols()))
        })
        .collect();
    Ok((value, Gradient { tensors }))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn new<P: Parameterized>(params: &P) -> Self {
        let zeros: Vec<DenseMatrix> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| DenseMatrix::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Applies one Adam update in place.
pub fn sgd_step<P: Parameterized>(params: &mut P, gradient: &Gradient, state: &mut AdamState, lr: f64) -> Result<()> {
    if params.is_frozen() {
        return Err(Error::Parameter("refusing to update frozen parameters".into()));
    }
    if !gradient.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let mut tensors = params.tensors_mut();
    if tensors.len() != gradient.tensors.len() || tensors.len() != state.first.len() {
        return Err(Error::Shape("gradient is not congruent with the parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let mut updates = Vec::with_capacity(tensors.len());
    for (i, g) in gradient.tensors.iter().enumerate() {
        if g.shape() != tensors[i].shape() {
            return Err(Error::Shape(format!("gradient {i} has shape {:?}", g.shape())));
        }
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        let mut update = DenseMatrix::zeros(g.rows(), g.cols());
        for (((mm, vv), &gg), u) in m
            .data_mut()
            .iter_mut()
            .zip(v.data_mut().iter_mut())
            .zip(g.data())
            .zip(update.data_mut())
        {
            *mm = state.beta1 * *mm + (1.0 - state.beta1) * gg;
            *vv = state.beta2 * *vv + (1.0 - state.beta2) * gg * gg;
            *u = lr * (*mm / c1) / ((*vv / c2).sqrt() + state.eps);
        }
        if !update.is_finite() {
            return Err(Error::Numeric(format!("non-finite update for tensor {i}")));
        }
        updates.push(update);
    }
    for (t, u) in tensors.iter_mut().zip(updates) {
        for (p, d) in t.data_mut().iter_mut().zip(u.data()) {
            *p -= d;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Linear;

    fn bowl(tape: &mut Tape, p: &<Linear as Parameterized>::Bound) -> Result<Var> {
        // sum of squares of every weight and bias entry
        let wt = tape.transpose(p.weight);
        let ww = tape.matmul(wt, p.weight)?;
        let d = tape.diag(ww)?;
        let bt = tape.transpose(p.bias);
        let bb = tape.matmul(p.bias, bt)?;
        let sw = tape.mean(d);
        let s = tape.add(sw, bb)?;
        Ok(s)
    }

    fn start() -> Linear {
        Linear {
            weight: DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap(),
            bias: DenseMatrix::row_vector(&[1.5, -0.5]),
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = start();
        let mut state = AdamState::new(&p);
        let g = Gradient {
            tensors: p
                .named_tensors()
                .iter()
                .map(|(_, t)| DenseMatrix::zeros(t.rows(), t.cols()))
                .collect(),
        };
        sgd_step(&mut p, &g, &mut state, 0.1).unwrap();
        assert_eq!(p, start());
    }

    #[test]
    fn bowl_descends_monotonically() {
        let mut p = start();
        let mut state = AdamState::new(&p);
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let (loss, g) = loss_gradient(&p, bowl).unwrap();
            assert!(loss < last, "{loss} >= {last}");
            last = loss;
            sgd_step(&mut p, &g, &mut state, 0.01).unwrap();
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = start();
            let mut state = AdamState::new(&p);
            for _ in 0..10 {
                let (_, g) = loss_gradient(&p, bowl).unwrap();
                sgd_step(&mut p, &g, &mut state, 0.05).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = start();
        let mut state = AdamState::new(&p);
        let mut g = loss_gradient(&p, bowl).unwrap().1;
        g.tensors[0].data_mut()[0] = f64::NAN;
        assert!(matches!(sgd_step(&mut p, &g, &mut state, 0.1), Err(Error::Numeric(_))));
    }
}
