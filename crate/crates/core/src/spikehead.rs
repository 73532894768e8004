//! Spiking head: two `affine → batchnorm → rectifier` stages evaluated over
//! `T` discrete time steps, averaged into a membrane potential.
//!
//! With the default (noise-free) configuration every time step computes the
//! same output, so the membrane potential does not depend on `T`. Step
//! outputs are averaged by pairwise summation, which keeps that exact in
//! floating point whenever `T` is a power of two.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbone::min_abs;
use crate::error::{ensure_dim, Error, Result};
use crate::linear::{relu, relu_backward, Linear};
use crate::matrix::{Matrix, Param};
use crate::rng::{self, purpose};
use crate::Mode;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Per-feature batch mean and biased variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNormState {
    pub fn new(width: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: Param::new(Matrix::filled(1, width, 1.0)),
            beta: Param::zeros(1, width),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum,
            eps,
        }
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }

    pub fn batch_stats(x: &Matrix) -> Result<BatchStats> {
        if x.rows() < 2 {
            return Err(Error::BatchTooSmall { rows: x.rows() });
        }
        let n = x.rows() as f64;
        let mean: Vec<f64> = x.column_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for ((v, &xi), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        Ok(BatchStats { mean, var })
    }

    /// Normalizes with the given statistics, then applies `gamma`/`beta`.
    pub fn apply(&self, x: &Matrix, mean: &[f64], var: &[f64], mode: Mode) -> Result<(Matrix, BnCache)> {
        ensure_dim("batchnorm width", self.width(), x.cols())?;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + self.eps)).collect();
        let xhat = Matrix::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - mean[j]) * inv_std[j]);
        let gamma = self.gamma.value.as_slice();
        let beta = self.beta.value.as_slice();
        let out = Matrix::from_fn(x.rows(), x.cols(), |i, j| gamma[j] * xhat[(i, j)] + beta[j]);
        Ok((out, BnCache { xhat, inv_std, mode }))
    }

    /// `running ← (1−momentum)·running + momentum·batch`.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }

    /// Pure normalization: batch statistics in train mode, running ones in
    /// eval mode. Returns the statistics that a train step would fold in.
    fn normalize(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, BnCache, Option<BatchStats>)> {
        ensure_dim("batchnorm width", self.width(), x.cols())?;
        match mode {
            Mode::Train => {
                let stats = Self::batch_stats(x)?;
                let (out, cache) = self.apply(x, &stats.mean, &stats.var, mode)?;
                Ok((out, cache, Some(stats)))
            }
            Mode::Eval => {
                let (out, cache) = self.apply(x, &self.running_mean, &self.running_var, mode)?;
                Ok((out, cache, None))
            }
        }
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<(Matrix, BnCache)> {
        let (out, cache, stats) = self.normalize(x, mode)?;
        if let Some(stats) = stats {
            self.update_running(&stats);
        }
        Ok((out, cache))
    }

    /// Accumulates `gamma`/`beta` gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, cache: &BnCache, delta: &Matrix) -> Result<Matrix> {
        let (rows, cols) = cache.xhat.shape();
        ensure_dim("batchnorm upstream rows", rows, delta.rows())?;
        ensure_dim("batchnorm upstream cols", cols, delta.cols())?;
        let mut d_gamma = vec![0.0; cols];
        let mut d_beta = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                d_gamma[j] += delta[(i, j)] * cache.xhat[(i, j)];
                d_beta[j] += delta[(i, j)];
            }
        }
        let gamma = self.gamma.value.as_slice().to_vec();
        let dx = match cache.mode {
            Mode::Eval => Matrix::from_fn(rows, cols, |i, j| delta[(i, j)] * gamma[j] * cache.inv_std[j]),
            Mode::Train => {
                let n = rows as f64;
                // sums of dxhat and dxhat·xhat per column
                let mut s1 = vec![0.0; cols];
                let mut s2 = vec![0.0; cols];
                for i in 0..rows {
                    for j in 0..cols {
                        let g = delta[(i, j)] * gamma[j];
                        s1[j] += g;
                        s2[j] += g * cache.xhat[(i, j)];
                    }
                }
                Matrix::from_fn(rows, cols, |i, j| {
                    let g = delta[(i, j)] * gamma[j];
                    cache.inv_std[j] / n * (n * g - s1[j] - cache.xhat[(i, j)] * s2[j])
                })
            }
        };
        self.gamma.accumulate_slice(&d_gamma)?;
        self.beta.accumulate_slice(&d_beta)?;
        Ok(dx)
    }
}

/// `BN(x)` with `state` in `mode`; train mode folds the batch statistics
/// into the running estimates.
pub fn bn_forward(x: &Matrix, state: &mut BatchNormState, mode: Mode) -> Result<Matrix> {
    Ok(state.forward(x, mode)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeHeadConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub time_steps: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Std of Gaussian noise added after `BN₁` at every step; 0 disables it.
    pub noise_std: f64,
}

impl Default for SpikeHeadConfig {
    fn default() -> Self {
        Self {
            input_dim: 128,
            hidden_dim: 256,
            output_dim: 10,
            time_steps: 4,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            noise_std: 0.0,
        }
    }
}

impl SpikeHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidConfig("spike head widths must be >= 1".into()));
        }
        if self.time_steps == 0 {
            return Err(Error::InvalidConfig("time_steps must be >= 1".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::InvalidConfig("bn_momentum must lie in (0, 1)".into()));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::InvalidConfig("bn_eps must be > 0".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig("noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct StepCache {
    /// `BN₁` output plus this step's noise, before the rectifier.
    hidden_pre: Matrix,
    hidden: Matrix,
    bn2: BnCache,
    out_pre: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
struct SpikeCache {
    x: Matrix,
    bn1: BnCache,
    steps: Vec<StepCache>,
}

struct RunOutput {
    membrane: Matrix,
    cache: SpikeCache,
    bn1_stats: Option<BatchStats>,
    bn2_stats: Option<BatchStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikeHead {
    pub config: SpikeHeadConfig,
    pub fc1: Linear,
    pub bn1: BatchNormState,
    pub fc2: Linear,
    pub bn2: BatchNormState,
    cache: Option<SpikeCache>,
}

fn pairwise_sum(items: &[Matrix]) -> Matrix {
    match items {
        [one] => one.clone(),
        _ => {
            let (left, right) = items.split_at(items.len() / 2);
            let mut acc = pairwise_sum(left);
            acc.add_assign(&pairwise_sum(right)).expect("equal step shapes");
            acc
        }
    }
}

fn pairwise_sum_vec(items: &[&[f64]]) -> Vec<f64> {
    match items {
        [one] => one.to_vec(),
        _ => {
            let (left, right) = items.split_at(items.len() / 2);
            let mut acc = pairwise_sum_vec(left);
            for (a, b) in acc.iter_mut().zip(pairwise_sum_vec(right)) {
                *a += b;
            }
            acc
        }
    }
}

impl SpikeHead {
    pub fn new(config: SpikeHeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, purpose::INIT);
        Ok(Self {
            fc1: Linear::he_normal(config.input_dim, config.hidden_dim, &mut rng),
            bn1: BatchNormState::new(config.hidden_dim, config.bn_momentum, config.bn_eps),
            fc2: Linear::he_normal(config.hidden_dim, config.output_dim, &mut rng),
            bn2: BatchNormState::new(config.output_dim, config.bn_momentum, config.bn_eps),
            config,
            cache: None,
        })
    }

    /// Assembles a head from explicit layers; widths must chain.
    pub fn from_parts(
        config: SpikeHeadConfig,
        fc1: Linear,
        bn1: BatchNormState,
        fc2: Linear,
        bn2: BatchNormState,
    ) -> Result<Self> {
        config.validate()?;
        ensure_dim("fc1 inputs", config.input_dim, fc1.inputs())?;
        ensure_dim("fc1 outputs", config.hidden_dim, fc1.outputs())?;
        ensure_dim("bn1 width", config.hidden_dim, bn1.width())?;
        ensure_dim("fc2 inputs", config.hidden_dim, fc2.inputs())?;
        ensure_dim("fc2 outputs", config.output_dim, fc2.outputs())?;
        ensure_dim("bn2 width", config.output_dim, bn2.width())?;
        Ok(Self {
            config,
            fc1,
            bn1,
            fc2,
            bn2,
            cache: None,
        })
    }

    fn run(&self, x: &Matrix, mode: Mode, seed: u64) -> Result<RunOutput> {
        let z1 = self.fc1.forward(x)?;
        let (a1, bn1_cache, bn1_stats) = self.bn1.normalize(&z1, mode)?;
        let noise = (self.config.noise_std > 0.0)
            .then(|| Normal::new(0.0, self.config.noise_std).expect("finite std"));
        let mut rng = rng::stream(seed, purpose::NOISE);

        let t = self.config.time_steps;
        let mut steps = Vec::with_capacity(t);
        let mut outputs = Vec::with_capacity(t);
        let mut step_stats = Vec::new();
        for _ in 0..t {
            let hidden_pre = match &noise {
                Some(normal) => a1.map(|v| v + normal.sample(&mut rng)),
                None => a1.clone(),
            };
            let hidden = hidden_pre.map(relu);
            let z2 = self.fc2.forward(&hidden)?;
            let (out_pre, bn2_cache, stats) = self.bn2.normalize(&z2, mode)?;
            outputs.push(out_pre.map(relu));
            step_stats.extend(stats);
            steps.push(StepCache {
                hidden_pre,
                hidden,
                bn2: bn2_cache,
                out_pre,
            });
        }

        let mut membrane = pairwise_sum(&outputs);
        membrane.scale(1.0 / t as f64);
        let bn2_stats = (!step_stats.is_empty()).then(|| {
            let means: Vec<&[f64]> = step_stats.iter().map(|s| s.mean.as_slice()).collect();
            let vars: Vec<&[f64]> = step_stats.iter().map(|s| s.var.as_slice()).collect();
            let k = step_stats.len() as f64;
            BatchStats {
                mean: pairwise_sum_vec(&means).into_iter().map(|v| v / k).collect(),
                var: pairwise_sum_vec(&vars).into_iter().map(|v| v / k).collect(),
            }
        });
        Ok(RunOutput {
            membrane,
            cache: SpikeCache {
                x: x.clone(),
                bn1: bn1_cache,
                steps,
            },
            bn1_stats,
            bn2_stats,
        })
    }

    /// Membrane potential without caching or touching running statistics.
    pub fn infer(&self, x: &Matrix, mode: Mode, seed: u64) -> Result<Matrix> {
        Ok(self.run(x, mode, seed)?.membrane)
    }

    /// Smallest `|pre-activation|` over both rectifiers and all steps.
    pub fn rectifier_margin(&self, x: &Matrix, mode: Mode, seed: u64) -> Result<f64> {
        let cache = self.run(x, mode, seed)?.cache;
        Ok(cache
            .steps
            .iter()
            .map(|s| min_abs(&s.hidden_pre).min(min_abs(&s.out_pre)))
            .fold(f64::INFINITY, f64::min))
    }

    /// Forward pass that caches for backward. In train mode the running
    /// statistics are updated once per call, independent of `T`.
    pub fn forward(&mut self, x: &Matrix, mode: Mode, seed: u64) -> Result<Matrix> {
        let out = self.run(x, mode, seed)?;
        if let Some(stats) = &out.bn1_stats {
            self.bn1.update_running(stats);
        }
        if let Some(stats) = &out.bn2_stats {
            self.bn2.update_running(stats);
        }
        self.cache = Some(out.cache);
        Ok(out.membrane)
    }

    pub fn backward(&mut self, delta: &Matrix) -> Result<Matrix> {
        let cache = self.cache.take().ok_or(Error::MissingCache("spike head"))?;
        let steps = cache.steps.len();
        ensure_dim("spike head upstream cols", self.config.output_dim, delta.cols())?;
        ensure_dim("spike head upstream rows", cache.x.rows(), delta.rows())?;
        let mut per_step = delta.clone();
        per_step.scale(1.0 / steps as f64);

        let mut d_a1 = Matrix::zeros(cache.x.rows(), self.config.hidden_dim);
        for step in &cache.steps {
            let d_out_pre = relu_backward(&step.out_pre, &per_step)?;
            let d_z2 = self.bn2.backward(&step.bn2, &d_out_pre)?;
            let d_hidden = self.fc2.backward(&step.hidden, &d_z2)?;
            d_a1.add_assign(&relu_backward(&step.hidden_pre, &d_hidden)?)?;
        }
        let d_z1 = self.bn1.backward(&cache.bn1, &d_a1)?;
        self.fc1.backward(&cache.x, &d_z1)
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![
            ("fc1.weight", &self.fc1.weight),
            ("fc1.bias", &self.fc1.bias),
            ("bn1.gamma", &self.bn1.gamma),
            ("bn1.beta", &self.bn1.beta),
            ("fc2.weight", &self.fc2.weight),
            ("fc2.bias", &self.fc2.bias),
            ("bn2.gamma", &self.bn2.gamma),
            ("bn2.beta", &self.bn2.beta),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![
            ("fc1.weight", &mut self.fc1.weight),
            ("fc1.bias", &mut self.fc1.bias),
            ("bn1.gamma", &mut self.bn1.gamma),
            ("bn1.beta", &mut self.bn1.beta),
            ("fc2.weight", &mut self.fc2.weight),
            ("fc2.bias", &mut self.fc2.bias),
            ("bn2.gamma", &mut self.bn2.gamma),
            ("bn2.beta", &mut self.bn2.beta),
        ]
    }

    pub fn buffers(&self) -> Vec<(&'static str, &Vec<f64>)> {
        vec![
            ("bn1.running_mean", &self.bn1.running_mean),
            ("bn1.running_var", &self.bn1.running_var),
            ("bn2.running_mean", &self.bn2.running_mean),
            ("bn2.running_var", &self.bn2.running_var),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("bn1.running_mean", &mut self.bn1.running_mean),
            ("bn1.running_var", &mut self.bn1.running_var),
            ("bn2.running_mean", &mut self.bn2.running_mean),
            ("bn2.running_var", &mut self.bn2.running_var),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_head(width: usize, t: usize) -> SpikeHead {
        let config = SpikeHeadConfig {
            input_dim: width,
            hidden_dim: width,
            output_dim: width,
            time_steps: t,
            ..SpikeHeadConfig::default()
        };
        let eye = || Linear {
            weight: Param::new(Matrix::identity(width)),
            bias: Param::zeros(1, width),
        };
        SpikeHead::from_parts(
            config,
            eye(),
            BatchNormState::new(width, 0.1, 1e-5),
            eye(),
            BatchNormState::new(width, 0.1, 1e-5),
        )
        .unwrap()
    }

    #[test]
    fn eval_identity_bn() {
        let mut bn = BatchNormState::new(3, 0.1, 1e-5);
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
        let y = bn_forward(&x, &mut bn, Mode::Eval).unwrap();
        let f = 1.0 / libm::sqrt(1.0 + 1e-5);
        for (a, b) in y.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b * f).abs() < 1e-15);
        }
    }

    #[test]
    fn train_bn_standardizes_columns() {
        let mut bn = BatchNormState::new(2, 0.1, 1e-5);
        let x = Matrix::from_rows(&[[1.0, 10.0], [2.0, 30.0], [4.0, 20.0], [9.0, 0.0]]).unwrap();
        let y = bn_forward(&x, &mut bn, Mode::Train).unwrap();
        let before = BatchNormState::batch_stats(&x).unwrap();
        let stats = BatchNormState::batch_stats(&y).unwrap();
        for j in 0..2 {
            assert!(stats.mean[j].abs() < 1e-9);
            // bn_eps shrinks the variance to v / (v + eps)
            let expected = before.var[j] / (before.var[j] + 1e-5);
            assert!((stats.var[j] - expected).abs() < 1e-12, "var {}", stats.var[j]);
        }
    }

    #[test]
    fn zero_variance_column_gives_beta() {
        let mut bn = BatchNormState::new(2, 0.1, 1e-5);
        bn.beta.value = Matrix::from_rows(&[[0.25, -1.5]]).unwrap();
        let x = Matrix::from_rows(&[[3.0, -7.0], [3.0, -7.0]]).unwrap();
        let y = bn_forward(&x, &mut bn, Mode::Train).unwrap();
        assert_eq!(y.as_slice(), &[0.25, -1.5, 0.25, -1.5]);
    }

    #[test]
    fn train_mode_rejects_single_row_and_bad_width() {
        let mut bn = BatchNormState::new(2, 0.1, 1e-5);
        assert!(matches!(
            bn_forward(&Matrix::zeros(1, 2), &mut bn, Mode::Train),
            Err(Error::BatchTooSmall { rows: 1 })
        ));
        assert!(bn_forward(&Matrix::zeros(3, 3), &mut bn, Mode::Eval).is_err());
    }

    #[test]
    fn running_stats_blend_once_per_call() {
        let mut head = SpikeHead::new(
            SpikeHeadConfig {
                input_dim: 3,
                hidden_dim: 4,
                output_dim: 2,
                time_steps: 8,
                ..SpikeHeadConfig::default()
            },
            5,
        )
        .unwrap();
        let x = Matrix::from_fn(5, 3, |i, j| libm::sin((i * 3 + j) as f64));
        let z1 = head.fc1.forward(&x).unwrap();
        let stats = BatchNormState::batch_stats(&z1).unwrap();
        let old = head.bn1.running_mean.clone();
        head.forward(&x, Mode::Train, 0).unwrap();
        for j in 0..4 {
            assert_eq!(head.bn1.running_mean[j], 0.9 * old[j] + 0.1 * stats.mean[j]);
        }
    }

    #[test]
    fn identity_composition() {
        let head = identity_head(3, 4);
        let x = Matrix::from_rows(&[[0.0, 1.0, 2.5], [4.0, 0.5, 3.0]]).unwrap();
        let m = head.infer(&x, Mode::Eval, 0).unwrap();
        let f = 1.0 / libm::sqrt(1.0 + 1e-5);
        for (a, b) in m.as_slice().iter().zip(x.as_slice()) {
            assert_eq!(*a, (b * f) * f);
        }
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut head = SpikeHead::new(
            SpikeHeadConfig {
                input_dim: 4,
                hidden_dim: 3,
                output_dim: 2,
                ..SpikeHeadConfig::default()
            },
            1,
        )
        .unwrap();
        let x = Matrix::from_fn(3, 4, |i, j| libm::cos((i + 2 * j) as f64));
        head.forward(&x, Mode::Train, 0).unwrap();
        let dx = head.backward(&Matrix::zeros(3, 2)).unwrap();
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
        for (_, p) in head.params() {
            assert!(p.grad.as_slice().iter().all(|&v| v == 0.0));
        }
        assert!(head.backward(&Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn noise_makes_steps_differ() {
        let mut config = SpikeHeadConfig {
            input_dim: 3,
            hidden_dim: 6,
            output_dim: 2,
            time_steps: 1,
            noise_std: 0.5,
            ..SpikeHeadConfig::default()
        };
        let x = Matrix::from_fn(4, 3, |i, j| (i as f64) - (j as f64) * 0.5);
        let one = SpikeHead::new(config, 2).unwrap().infer(&x, Mode::Eval, 3).unwrap();
        config.time_steps = 8;
        let eight = SpikeHead::new(config, 2).unwrap().infer(&x, Mode::Eval, 3).unwrap();
        assert!(one.max_abs_diff(&eight) > 0.0);
        assert!(eight.as_slice().iter().all(|&v| v >= 0.0));
    }
}
