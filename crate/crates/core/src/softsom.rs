//! Differentiable soft self-organizing layer.
//!
//! Each input row is compared against `K` learnable prototypes by Euclidean
//! distance; a softmax over the negated (temperature-scaled) distances turns
//! the row into a soft assignment. Training mode applies inverted dropout to
//! the assignment.
//!
//! The backward pass differentiates through the full softmax Jacobian. A
//! `DiagonalOnly` mode keeps only the `j == k` Jacobian term; it is not the
//! true derivative whenever `K ≥ 2` and exists to measure that gap.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::matrix::{Matrix, Param};
use crate::rng::{self, purpose};

/// Distances below this are clamped when dividing in the backward pass.
pub const DISTANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    FullJacobian,
    DiagonalOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SomConfig {
    pub prototypes: usize,
    pub input_dim: usize,
    pub dropout: f64,
    pub temperature: f64,
    pub distance_eps: f64,
    pub gradient_mode: GradientMode,
}

impl Default for SomConfig {
    fn default() -> Self {
        Self {
            prototypes: 128,
            input_dim: 2048,
            dropout: 0.1,
            temperature: 1.0,
            distance_eps: 1e-8,
            gradient_mode: GradientMode::FullJacobian,
        }
    }
}

impl SomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prototypes == 0 {
            return Err(Error::InvalidConfig("prototype count must be >= 1".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("som input_dim must be >= 1".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        if !(self.distance_eps >= 0.0) {
            return Err(Error::InvalidConfig("distance_eps must be >= 0".into()));
        }
        Ok(())
    }
}

/// `D[i][j] = sqrt(‖x_i − p_j‖² + eps²)`.
pub fn distances(x: &Matrix, prototypes: &Matrix, eps: f64) -> Result<Matrix> {
    ensure_dim("distance feature width", prototypes.cols(), x.cols())?;
    let eps2 = eps * eps;
    Ok(Matrix::from_fn(x.rows(), prototypes.rows(), |i, j| {
        let sq: f64 = x
            .row(i)
            .iter()
            .zip(prototypes.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        libm::sqrt(sq + eps2)
    }))
}

/// Row-wise softmax of `−D/τ`, stabilized by subtracting the row minimum
/// distance (the maximum of the negated logits).
pub fn soft_assign(d: &Matrix, temperature: f64) -> Matrix {
    let mut s = Matrix::zeros(d.rows(), d.cols());
    for i in 0..d.rows() {
        let row = d.row(i);
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        let out = s.row_mut(i);
        let mut total = 0.0;
        for (o, &dij) in out.iter_mut().zip(row) {
            *o = libm::exp(-(dij - min) / temperature);
            total += *o;
        }
        out.iter_mut().for_each(|v| *v /= total);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    pub prototypes: Param,
}

impl PrototypeBank {
    pub fn new(prototypes: Matrix) -> Self {
        Self {
            prototypes: Param::new(prototypes),
        }
    }

    pub fn count(&self) -> usize {
        self.prototypes.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.value.cols()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum PrototypeInit<'a> {
    /// `K` distinct rows of the batch, drawn without replacement.
    Sample { batch: &'a Matrix, seed: u64 },
    /// Entries from `N(0, 1/d)`.
    Gaussian { seed: u64 },
}

pub fn init_prototypes(count: usize, dim: usize, init: PrototypeInit<'_>) -> Result<PrototypeBank> {
    match init {
        PrototypeInit::Sample { batch, seed } => {
            ensure_dim("sample batch width", dim, batch.cols())?;
            if batch.rows() < count {
                return Err(Error::InvalidConfig(alloc::format!(
                    "sample init needs at least {count} rows, batch has {}",
                    batch.rows()
                )));
            }
            let mut rng = rng::stream(seed, purpose::INIT);
            let picks = index::sample(&mut rng, batch.rows(), count).into_vec();
            Ok(PrototypeBank::new(batch.select_rows(&picks)))
        }
        PrototypeInit::Gaussian { seed } => {
            let mut rng = rng::stream(seed, purpose::INIT);
            let normal = Normal::new(0.0, libm::sqrt(1.0 / dim as f64)).expect("positive std");
            Ok(PrototypeBank::new(Matrix::from_fn(count, dim, |_, _| {
                normal.sample(&mut rng)
            })))
        }
    }
}

/// Output of one soft-SOM forward pass plus what backward needs.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment {
    /// Returned assignment (after dropout in training mode).
    pub assignments: Matrix,
    /// Row-stochastic softmax output before dropout.
    pub soft: Matrix,
    pub distances: Matrix,
    /// Zero / `1/(1−p)` entries; `None` in eval mode or with `p = 0`.
    pub dropout_mask: Option<Matrix>,
}

/// Inverted-dropout mask for an `rows × cols` matrix.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Matrix {
    let mut rng = rng::stream(seed, purpose::DROPOUT);
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

pub fn ssol_forward(
    x: &Matrix,
    bank: &PrototypeBank,
    config: &SomConfig,
    training: bool,
    seed: u64,
) -> Result<SoftAssignment> {
    ensure_dim("som prototype count", config.prototypes, bank.count())?;
    let d = distances(x, &bank.prototypes.value, config.distance_eps)?;
    let soft = soft_assign(&d, config.temperature);
    let (assignments, dropout_mask) = if training && config.dropout > 0.0 {
        let mask = dropout_mask(soft.rows(), soft.cols(), config.dropout, seed);
        (soft.zip_map(&mask, |s, m| s * m)?, Some(mask))
    } else {
        (soft.clone(), None)
    };
    Ok(SoftAssignment {
        assignments,
        soft,
        distances: d,
        dropout_mask,
    })
}

/// Gradient of the loss with respect to the distance matrix.
pub fn distance_gradient(
    cache: &SoftAssignment,
    upstream: &Matrix,
    temperature: f64,
    mode: GradientMode,
) -> Result<Matrix> {
    let s = &cache.soft;
    ensure_dim("som upstream rows", s.rows(), upstream.rows())?;
    ensure_dim("som upstream cols", s.cols(), upstream.cols())?;
    let delta = match &cache.dropout_mask {
        Some(mask) => upstream.zip_map(mask, |g, m| g * m)?,
        None => upstream.clone(),
    };
    let mut g = Matrix::zeros(s.rows(), s.cols());
    for i in 0..s.rows() {
        let (s_row, d_row) = (s.row(i), delta.row(i));
        match mode {
            GradientMode::FullJacobian => {
                let dot: f64 = s_row.iter().zip(d_row).map(|(a, b)| a * b).sum();
                for ((out, &sij), &dij) in g.row_mut(i).iter_mut().zip(s_row).zip(d_row) {
                    *out = sij * (dot - dij) / temperature;
                }
            }
            GradientMode::DiagonalOnly => {
                for ((out, &sij), &dij) in g.row_mut(i).iter_mut().zip(s_row).zip(d_row) {
                    *out = -dij * sij * (1.0 - sij) / temperature;
                }
            }
        }
    }
    Ok(g)
}

/// Returns `∂L/∂X` and adds `∂L/∂P` into `bank.prototypes.grad`.
pub fn ssol_backward(
    cache: &SoftAssignment,
    x: &Matrix,
    bank: &mut PrototypeBank,
    config: &SomConfig,
    upstream: &Matrix,
) -> Result<Matrix> {
    ensure_dim("som cached rows", cache.distances.rows(), x.rows())?;
    ensure_dim("som feature width", bank.dim(), x.cols())?;
    let g = distance_gradient(cache, upstream, config.temperature, config.gradient_mode)?;
    let p = &bank.prototypes.value;
    let mut grad_x = Matrix::zeros(x.rows(), x.cols());
    let mut grad_p = Matrix::zeros(p.rows(), p.cols());
    for i in 0..x.rows() {
        for j in 0..p.rows() {
            let w = g[(i, j)];
            if w == 0.0 {
                continue;
            }
            let scale = w / cache.distances[(i, j)].max(DISTANCE_FLOOR);
            let (xi, pj) = (x.row(i), p.row(j));
            for k in 0..x.cols() {
                let diff = scale * (xi[k] - pj[k]);
                grad_x[(i, k)] += diff;
                grad_p[(j, k)] -= diff;
            }
        }
    }
    bank.prototypes.accumulate(&grad_p)?;
    Ok(grad_x)
}

#[derive(Clone, Debug, PartialEq)]
struct SomCache {
    x: Matrix,
    assignment: SoftAssignment,
}

/// A soft-SOM layer owning its prototypes and forward cache.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftSom {
    pub config: SomConfig,
    pub bank: PrototypeBank,
    cache: Option<SomCache>,
}

impl SoftSom {
    pub fn new(config: SomConfig, bank: PrototypeBank) -> Result<Self> {
        config.validate()?;
        ensure_dim("prototype count", config.prototypes, bank.count())?;
        ensure_dim("prototype width", config.input_dim, bank.dim())?;
        Ok(Self {
            config,
            bank,
            cache: None,
        })
    }

    pub fn infer(&self, x: &Matrix, training: bool, seed: u64) -> Result<Matrix> {
        Ok(ssol_forward(x, &self.bank, &self.config, training, seed)?.assignments)
    }

    pub fn forward(&mut self, x: &Matrix, training: bool, seed: u64) -> Result<Matrix> {
        let assignment = ssol_forward(x, &self.bank, &self.config, training, seed)?;
        let out = assignment.assignments.clone();
        self.cache = Some(SomCache {
            x: x.clone(),
            assignment,
        });
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Matrix) -> Result<Matrix> {
        let cache = self.cache.take().ok_or(Error::MissingCache("soft som"))?;
        ssol_backward(&cache.assignment, &cache.x, &mut self.bank, &self.config, upstream)
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        alloc::vec![("prototypes", &self.bank.prototypes)]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        alloc::vec![("prototypes", &mut self.bank.prototypes)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(k: usize, d: usize) -> SomConfig {
        SomConfig {
            prototypes: k,
            input_dim: d,
            dropout: 0.0,
            ..SomConfig::default()
        }
    }

    #[test]
    fn coincident_and_345() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let p = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let d = distances(&x, &p, 0.0).unwrap();
        assert_eq!(d[(0, 0)], 5.0);
        assert_eq!(d[(1, 0)], 0.0);
        assert!(distances(&x, &Matrix::zeros(1, 3), 0.0).is_err());
    }

    #[test]
    fn softmax_cases() {
        let s = soft_assign(&Matrix::filled(1, 4, 2.5), 1.0);
        assert!(s.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let s = soft_assign(&Matrix::from_rows(&[[7.0], [0.0]]).unwrap(), 1.0);
        assert_eq!(s.as_slice(), &[1.0, 1.0]);
        let s = soft_assign(&Matrix::from_rows(&[[0.0, 1.0]]).unwrap(), 1.0);
        assert!((s[(0, 0)] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((s[(0, 1)] - 0.268_941_421_369_995_1).abs() < 1e-12);
    }

    #[test]
    fn dropout_zero_matches_eval() {
        let x = Matrix::from_fn(4, 3, |i, j| (i as f64) * 0.3 - (j as f64) * 0.7);
        let bank = init_prototypes(5, 3, PrototypeInit::Gaussian { seed: 3 }).unwrap();
        let cfg = config(5, 3);
        let train = ssol_forward(&x, &bank, &cfg, true, 9).unwrap();
        let eval = ssol_forward(&x, &bank, &cfg, false, 9).unwrap();
        assert_eq!(train.assignments, eval.assignments);
        for row in eval.assignments.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_and_single_prototype() {
        let x = Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.4 + 0.1);
        for k in [1usize, 4] {
            let mut bank = init_prototypes(k, 2, PrototypeInit::Gaussian { seed: 1 }).unwrap();
            let cfg = config(k, 2);
            let cache = ssol_forward(&x, &bank, &cfg, false, 0).unwrap();
            let upstream = if k == 1 {
                Matrix::from_fn(3, 1, |i, _| i as f64 + 1.0)
            } else {
                Matrix::zeros(3, k)
            };
            let gx = ssol_backward(&cache, &x, &mut bank, &cfg, &upstream).unwrap();
            assert!(gx.as_slice().iter().all(|&v| v.abs() < 1e-15), "k={k}");
            assert!(bank.prototypes.grad.as_slice().iter().all(|&v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn sample_init() {
        let batch = Matrix::from_fn(4, 2, |i, j| (10 * i + j) as f64);
        let bank = init_prototypes(4, 2, PrototypeInit::Sample { batch: &batch, seed: 5 }).unwrap();
        let mut rows: Vec<Vec<f64>> = bank.prototypes.value.iter_rows().map(<[f64]>::to_vec).collect();
        rows.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        let want: Vec<Vec<f64>> = batch.iter_rows().map(<[f64]>::to_vec).collect();
        assert_eq!(rows, want);
        assert!(init_prototypes(5, 2, PrototypeInit::Sample { batch: &batch, seed: 5 }).is_err());
    }

    #[test]
    fn gaussian_init_reproducible() {
        let a = init_prototypes(3, 4, PrototypeInit::Gaussian { seed: 8 }).unwrap();
        let b = init_prototypes(3, 4, PrototypeInit::Gaussian { seed: 8 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_init_variance() {
        let bank = init_prototypes(128, 2048, PrototypeInit::Gaussian { seed: 42 }).unwrap();
        let v = bank.prototypes.value.as_slice();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let target = 1.0 / 2048.0;
        assert!((var - target).abs() < 0.2 * target, "var {var}");
    }

    #[test]
    fn backward_without_forward() {
        let bank = init_prototypes(2, 2, PrototypeInit::Gaussian { seed: 0 }).unwrap();
        let mut layer = SoftSom::new(config(2, 2), bank).unwrap();
        assert!(matches!(
            layer.backward(&Matrix::zeros(1, 2)),
            Err(Error::MissingCache(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(config(0, 2).validate().is_err());
        let mut c = config(2, 2);
        c.temperature = 0.0;
        assert!(c.validate().is_err());
        c.temperature = 1.0;
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }
}
