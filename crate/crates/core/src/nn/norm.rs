//! Fixed per-column standardization of encoder readouts.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::matrix::DenseMatrix;
use super::tape::{column_moments, Tape, Var};

/// Added to the variance before standardizing readouts.
pub const READOUT_EPS: f64 = 1e-5;

/// `y = (x - shift) * scale` column-wise. The default is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutNorm {
    /// `1 x width`.
    pub shift: DenseMatrix,
    /// `1 x width`.
    pub scale: DenseMatrix,
}

impl ReadoutNorm {
    pub fn identity(width: usize) -> Self {
        Self {
            shift: DenseMatrix::zeros(1, width),
            scale: DenseMatrix::filled(1, width, 1.0),
        }
    }

    /// Column mean and inverse standard deviation of `rows`.
    pub fn fit(rows: &DenseMatrix) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::Shape("readout statistics from zero rows".into()));
        }
        let (mean, var) = column_moments(rows);
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / (v + READOUT_EPS).sqrt()).collect();
        Ok(Self {
            shift: DenseMatrix::row_vector(&mean),
            scale: DenseMatrix::row_vector(&scale),
        })
    }

    pub fn width(&self) -> usize {
        self.shift.cols()
    }

    pub fn check(&self, width: usize) -> Result<()> {
        if self.shift.shape() != (1, width) || self.scale.shape() != (1, width) {
            return Err(Error::Shape(format!("readout statistics do not have width {width}")));
        }
        Ok(())
    }

    pub fn named(&self) -> Vec<(String, &DenseMatrix)> {
        vec![
            ("readout.shift".into(), &self.shift),
            ("readout.scale".into(), &self.scale),
        ]
    }

    pub(crate) fn from_named(named: &[(String, DenseMatrix)]) -> Result<Self> {
        let find = |name: &str| {
            named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
        };
        Ok(Self {
            shift: find("readout.shift")?,
            scale: find("readout.scale")?,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundNorm {
        let offset: Vec<f64> = self
            .shift
            .data()
            .iter()
            .zip(self.scale.data())
            .map(|(m, s)| -m * s)
            .collect();
        BoundNorm {
            offset: tape.constant(DenseMatrix::row_vector(&offset)),
            scale: Arc::new(self.scale.data().to_vec()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundNorm {
    offset: Var,
    scale: Arc<Vec<f64>>,
}

impl BoundNorm {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let scaled = tape.scale_cols(x, self.scale.clone())?;
        tape.add_bias(scaled, self.offset)
    }
}
