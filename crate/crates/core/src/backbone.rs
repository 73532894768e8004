//! Feature providers standing in for a frozen CNN backbone.
//!
//! `StoreReplay` hands back precomputed embeddings unchanged. `ToyBackbone`
//! is a small trainable rectifier MLP that lets gradients flow all the way to
//! the raw input in end-to-end checks.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::FeatureStore;
use crate::error::{ensure_dim, Error, Result};
use crate::linear::{relu, relu_backward, Linear};
use crate::matrix::{Matrix, Param};
use crate::rng::{self, purpose};

/// Embedding width of a ResNet-152 global-average-pooled feature.
pub const RESNET152_FEATURE_DIM: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyBackboneConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl Default for ToyBackboneConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden_dim: 64,
            output_dim: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ToyCache {
    x: Matrix,
    pre: Matrix,
    hidden: Matrix,
}

/// `affine → rectifier → affine`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyBackbone {
    pub fc1: Linear,
    pub fc2: Linear,
    cache: Option<ToyCache>,
}

impl ToyBackbone {
    pub fn new(config: ToyBackboneConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, purpose::INIT);
        Self {
            fc1: Linear::he_normal(config.input_dim, config.hidden_dim, &mut rng),
            fc2: Linear::he_normal(config.hidden_dim, config.output_dim, &mut rng),
            cache: None,
        }
    }

    pub fn from_layers(fc1: Linear, fc2: Linear) -> Result<Self> {
        ensure_dim("backbone hidden width", fc1.outputs(), fc2.inputs())?;
        Ok(Self {
            fc1,
            fc2,
            cache: None,
        })
    }

    /// Identity weights and zero biases at width `d`.
    pub fn identity(d: usize) -> Self {
        let eye = |d| Linear {
            weight: Param::new(Matrix::identity(d)),
            bias: Param::zeros(1, d),
        };
        Self {
            fc1: eye(d),
            fc2: eye(d),
            cache: None,
        }
    }

    pub fn config(&self) -> ToyBackboneConfig {
        ToyBackboneConfig {
            input_dim: self.fc1.inputs(),
            hidden_dim: self.fc1.outputs(),
            output_dim: self.fc2.outputs(),
        }
    }

    fn run(&self, x: &Matrix) -> Result<(Matrix, ToyCache)> {
        let pre = self.fc1.forward(x)?;
        let hidden = pre.map(relu);
        let out = self.fc2.forward(&hidden)?;
        Ok((
            out,
            ToyCache {
                x: x.clone(),
                pre,
                hidden,
            },
        ))
    }

    /// Pure forward; leaves no cache.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.run(x)?.0)
    }

    /// Smallest `|pre-activation|` at the rectifier for input `x`.
    pub fn rectifier_margin(&self, x: &Matrix) -> Result<f64> {
        Ok(min_abs(&self.run(x)?.1.pre))
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let (out, cache) = self.run(x)?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self, delta: &Matrix) -> Result<Matrix> {
        let cache = self.cache.take().ok_or(Error::MissingCache("toy backbone"))?;
        let d_hidden = self.fc2.backward(&cache.hidden, delta)?;
        let d_pre = relu_backward(&cache.pre, &d_hidden)?;
        self.fc1.backward(&cache.x, &d_pre)
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        alloc::vec![
            ("fc1.weight", &self.fc1.weight),
            ("fc1.bias", &self.fc1.bias),
            ("fc2.weight", &self.fc2.weight),
            ("fc2.bias", &self.fc2.bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        alloc::vec![
            ("fc1.weight", &mut self.fc1.weight),
            ("fc1.bias", &mut self.fc1.bias),
            ("fc2.weight", &mut self.fc2.weight),
            ("fc2.bias", &mut self.fc2.bias),
        ]
    }
}

pub(crate) fn min_abs(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| libm::fabs(*v)).fold(f64::INFINITY, f64::min)
}

/// One input to a provider: a stored record or a raw vector.
#[derive(Clone, Copy, Debug)]
pub enum RawInput<'a> {
    Record { store: &'a FeatureStore, index: usize },
    Vector(&'a [f64]),
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureProvider {
    StoreReplay { dim: usize },
    Toy(ToyBackbone),
}

impl FeatureProvider {
    pub fn output_dim(&self) -> usize {
        match self {
            FeatureProvider::StoreReplay { dim } => *dim,
            FeatureProvider::Toy(b) => b.fc2.outputs(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureProvider::StoreReplay { dim } => *dim,
            FeatureProvider::Toy(b) => b.fc1.inputs(),
        }
    }

    pub fn provide(&self, input: RawInput<'_>) -> Result<Vec<f64>> {
        let raw: Vec<f64> = match input {
            RawInput::Record { store, index } => {
                if index >= store.len() {
                    return Err(Error::DimensionMismatch {
                        what: "record index within store",
                        expected: store.len(),
                        found: index,
                    });
                }
                store.row(index).iter().map(|&v| f64::from(v)).collect()
            }
            RawInput::Vector(v) => v.to_vec(),
        };
        ensure_dim("provider input dimension", self.input_dim(), raw.len())?;
        let out = match self {
            FeatureProvider::StoreReplay { .. } => raw,
            FeatureProvider::Toy(b) => {
                let width = raw.len();
                b.infer(&Matrix::from_vec(1, width, raw)?)?.into_vec()
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("provider output"));
        }
        Ok(out)
    }
}
