use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure_dim, Result};
use crate::matrix::{Matrix, Param};

/// Affine map `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::zeros(inputs, outputs),
            bias: Param::zeros(1, outputs),
        }
    }

    /// Weights from `N(0, 2/inputs)`, zero bias.
    pub fn he_normal(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, libm::sqrt(2.0 / inputs as f64)).expect("positive std");
        let w = Matrix::from_fn(inputs, outputs, |_, _| normal.sample(rng));
        Self {
            weight: Param::new(w),
            bias: Param::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        ensure_dim("linear input width", self.inputs(), x.cols())?;
        let mut y = x.matmul(&self.weight.value)?;
        y.add_row_vector(self.bias.value.as_slice())?;
        Ok(y)
    }

    /// Accumulates `∂W = xᵀδ`, `∂b = Σ_rows δ` and returns `δ·Wᵀ`.
    pub fn backward(&mut self, x: &Matrix, delta: &Matrix) -> Result<Matrix> {
        ensure_dim("linear upstream width", self.outputs(), delta.cols())?;
        ensure_dim("linear upstream rows", x.rows(), delta.rows())?;
        self.weight.accumulate(&x.t_matmul(delta)?)?;
        self.bias.accumulate_slice(&delta.column_sums())?;
        delta.matmul_t(&self.weight.value)
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        alloc::vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        alloc::vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

pub(crate) fn relu(v: f64) -> f64 {
    // rectifier subgradient at 0 is 0 in backward; forward is max(v, 0)
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// `δ ⊙ 1[pre > 0]`.
pub(crate) fn relu_backward(pre: &Matrix, delta: &Matrix) -> Result<Matrix> {
    pre.zip_map(delta, |p, d| if p > 0.0 { d } else { 0.0 })
}
