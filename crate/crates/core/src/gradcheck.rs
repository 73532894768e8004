//! Central finite-difference checks for every differentiable component.
//!
//! Each check builds a small seeded random instance, computes analytic
//! gradients through the component's `backward`, and compares them against
//! `(L(θ+h) − L(θ−h)) / 2h` for every scalar in every tensor. The loss for
//! layer checks is `Σ W ⊙ output` with a random weight matrix `W`, so the
//! upstream gradient differs across columns.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backbone::{ToyBackbone, ToyBackboneConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::{Head, Model, ModelConfig, Variant};
use crate::objective::smoothed_ce;
use crate::rng::{self, purpose};
use crate::softsom::{distances, ssol_backward, ssol_forward, GradientMode, PrototypeBank, SomConfig};
use crate::spikehead::{SpikeHead, SpikeHeadConfig};
use crate::Mode;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-3;
/// Instances with a rectifier input closer than this to 0 are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;
/// Instances with an input closer than this to a prototype are redrawn.
pub const COINCIDENCE_MARGIN: f64 = 1e-3;
const MAX_ATTEMPTS: u64 = 64;

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = libm::fabs(analytic).max(libm::fabs(numeric)).max(RELATIVE_FLOOR);
    libm::fabs(analytic - numeric) / scale
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_relative_error: f64,
    /// `tensor[index]` of the worst entry.
    pub worst: String,
    pub entries: usize,
}

impl Default for GradReport {
    fn default() -> Self {
        Self {
            max_relative_error: 0.0,
            worst: String::new(),
            entries: 0,
        }
    }
}

impl GradReport {
    fn compare(&mut self, name: &str, analytic: &[f64], numeric: &[f64]) -> Result<()> {
        if analytic.len() != numeric.len() {
            return Err(Error::LengthMismatch {
                left: analytic.len(),
                right: numeric.len(),
            });
        }
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let err = relative_error(a, n);
            if !(err <= self.max_relative_error) {
                self.max_relative_error = err;
                self.worst = format!("{name}[{i}]");
            }
        }
        self.entries += analytic.len();
        Ok(())
    }

    /// Worst-case merge of two reports.
    pub fn merge(mut self, other: GradReport) -> GradReport {
        if other.max_relative_error > self.max_relative_error {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst;
        }
        self.entries += other.entries;
        self
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Central differences of `loss` over the slice that `access` exposes.
pub fn numeric_gradient<T, A, L>(base: &T, access: A, loss: L) -> Result<Vec<f64>>
where
    T: Clone,
    A: Fn(&mut T) -> &mut [f64],
    L: Fn(&T) -> Result<f64>,
{
    let mut probe = base.clone();
    let n = access(&mut probe).len();
    let mut out = Vec::with_capacity(n);
    for e in 0..n {
        let orig = access(&mut probe)[e];
        access(&mut probe)[e] = orig + FD_STEP;
        let up = loss(&probe)?;
        access(&mut probe)[e] = orig - FD_STEP;
        let down = loss(&probe)?;
        access(&mut probe)[e] = orig;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(out)
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * gauss(rng))
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn weighted_sum(w: &Matrix, out: &Matrix) -> f64 {
    w.as_slice().iter().zip(out.as_slice()).map(|(a, b)| a * b).sum()
}

fn attempt_rng(seed: u64, attempt: u64) -> ChaCha8Rng {
    rng::stream(rng::mix(seed, attempt), purpose::INIT)
}

/// Runs `build` on fresh randomness until it yields an instance.
fn first_instance<T>(seed: u64, mut build: impl FnMut(&mut ChaCha8Rng) -> Result<Option<T>>) -> Result<T> {
    for attempt in 0..MAX_ATTEMPTS {
        if let Some(instance) = build(&mut attempt_rng(seed, attempt))? {
            return Ok(instance);
        }
    }
    Err(Error::InvalidConfig("no admissible gradient-check instance".into()))
}

/// SSOL with `N = 3`, `K = 4`, `d = 5`; checks both `X` and `P`.
pub fn check_ssol(seed: u64, mode: GradientMode, training: bool) -> Result<GradReport> {
    let config = SomConfig {
        prototypes: 4,
        input_dim: 5,
        gradient_mode: mode,
        ..SomConfig::default()
    };
    let (x, p, w) = first_instance(seed, |rng| {
        let x = normal_matrix(3, 5, 1.0, rng);
        let p = normal_matrix(4, 5, 1.0, rng);
        let w = normal_matrix(3, 4, 1.0, rng);
        let d = distances(&x, &p, 0.0)?;
        Ok(d.as_slice().iter().all(|&v| v >= COINCIDENCE_MARGIN).then_some((x, p, w)))
    })?;
    let drop_seed = rng::mix(seed, 0xd0);
    let loss = |state: &(Matrix, Matrix)| -> Result<f64> {
        let bank = PrototypeBank::new(state.1.clone());
        let out = ssol_forward(&state.0, &bank, &config, training, drop_seed)?;
        Ok(weighted_sum(&w, &out.assignments))
    };

    let mut bank = PrototypeBank::new(p.clone());
    let cache = ssol_forward(&x, &bank, &config, training, drop_seed)?;
    let grad_x = ssol_backward(&cache, &x, &mut bank, &config, &w)?;

    let state = (x, p);
    let mut report = GradReport::default();
    let num_x = numeric_gradient(&state, |s| s.0.as_mut_slice(), loss)?;
    report.compare("x", grad_x.as_slice(), &num_x)?;
    let num_p = numeric_gradient(&state, |s| s.1.as_mut_slice(), loss)?;
    report.compare("prototypes", bank.prototypes.grad.as_slice(), &num_p)?;
    Ok(report)
}

fn randomize_batchnorm(head: &mut SpikeHead, rng: &mut ChaCha8Rng) {
    for bn in [&mut head.bn1, &mut head.bn2] {
        for g in bn.gamma.value.as_mut_slice() {
            *g = rng.random_range(0.5..1.5);
        }
        for b in bn.beta.value.as_mut_slice() {
            *b = 0.5 * gauss(rng);
        }
        for m in &mut bn.running_mean {
            *m = 0.5 * gauss(rng);
        }
        for v in &mut bn.running_var {
            *v = rng.random_range(0.5..2.0);
        }
    }
}

fn randomize_biases(layers: [&mut crate::linear::Linear; 2], rng: &mut ChaCha8Rng) {
    for layer in layers {
        for b in layer.bias.value.as_mut_slice() {
            *b = 0.5 * gauss(rng);
        }
    }
}

/// Spiking head with `n = 6`, `m_h = 5`, `m = 4`, `N = 3`, `T = 3`.
pub fn check_spikehead(seed: u64, mode: Mode) -> Result<GradReport> {
    let config = SpikeHeadConfig {
        input_dim: 6,
        hidden_dim: 5,
        output_dim: 4,
        time_steps: 3,
        ..SpikeHeadConfig::default()
    };
    let (head, x, w) = first_instance(seed, |rng| {
        let mut head = SpikeHead::new(config, rng.random())?;
        randomize_batchnorm(&mut head, rng);
        randomize_biases([&mut head.fc1, &mut head.fc2], rng);
        let x = normal_matrix(3, 6, 1.0, rng);
        let w = normal_matrix(3, 4, 1.0, rng);
        let ok = head.rectifier_margin(&x, mode, 0)? >= KINK_MARGIN;
        Ok(ok.then_some((head, x, w)))
    })?;

    let mut analytic = head.clone();
    analytic.forward(&x, mode, 0)?;
    let grad_x = analytic.backward(&w)?;

    let mut report = GradReport::default();
    let num_x = numeric_gradient(&x, |m| m.as_mut_slice(), |m| {
        Ok(weighted_sum(&w, &head.infer(m, mode, 0)?))
    })?;
    report.compare("x", grad_x.as_slice(), &num_x)?;
    let loss = |h: &SpikeHead| Ok(weighted_sum(&w, &h.infer(&x, mode, 0)?));
    for (i, (name, param)) in analytic.params().into_iter().enumerate() {
        let num = numeric_gradient(
            &head,
            |h| h.params_mut().swap_remove(i).1.value.as_mut_slice(),
            loss,
        )?;
        report.compare(name, param.grad.as_slice(), &num)?;
    }
    Ok(report)
}

/// Toy backbone `6 → 7 → 5` on a random `4 × 6` input.
pub fn check_backbone(seed: u64) -> Result<GradReport> {
    let config = ToyBackboneConfig {
        input_dim: 6,
        hidden_dim: 7,
        output_dim: 5,
    };
    let (net, x, w) = first_instance(seed, |rng| {
        let mut net = ToyBackbone::new(config, rng.random());
        randomize_biases([&mut net.fc1, &mut net.fc2], rng);
        let x = normal_matrix(4, 6, 1.0, rng);
        let w = normal_matrix(4, 5, 1.0, rng);
        let ok = net.rectifier_margin(&x)? >= KINK_MARGIN;
        Ok(ok.then_some((net, x, w)))
    })?;

    let mut analytic = net.clone();
    analytic.forward(&x)?;
    let grad_x = analytic.backward(&w)?;

    let mut report = GradReport::default();
    let num_x = numeric_gradient(&x, |m| m.as_mut_slice(), |m| Ok(weighted_sum(&w, &net.infer(m)?)))?;
    report.compare("x", grad_x.as_slice(), &num_x)?;
    let loss = |b: &ToyBackbone| Ok(weighted_sum(&w, &b.infer(&x)?));
    for (i, (name, param)) in analytic.params().into_iter().enumerate() {
        let num = numeric_gradient(
            &net,
            |b| b.params_mut().swap_remove(i).1.value.as_mut_slice(),
            loss,
        )?;
        report.compare(name, param.grad.as_slice(), &num)?;
    }
    Ok(report)
}

/// Label-smoothed cross-entropy on random `4 × 10` logits, `ε = 0.1`.
pub fn check_smoothed_ce(seed: u64) -> Result<GradReport> {
    let mut rng = attempt_rng(seed, 0);
    let logits = normal_matrix(4, 10, 2.0, &mut rng);
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..10)).collect();
    let (_, grad) = smoothed_ce(&logits, &labels, 0.1)?;
    let num = numeric_gradient(&logits, |m| m.as_mut_slice(), |m| {
        Ok(smoothed_ce(m, &labels, 0.1)?.0)
    })?;
    let mut report = GradReport::default();
    report.compare("logits", grad.as_slice(), &num)?;
    Ok(report)
}

/// Toy dimensions for the composed model: backbone `6 → 7 → 5`, `K = 4`,
/// `m_h = 5`, three classes, `T = 2`.
pub fn toy_model_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        input_dim: 6,
        num_classes: 3,
        backbone: Some(ToyBackboneConfig {
            input_dim: 6,
            hidden_dim: 7,
            output_dim: 5,
        }),
        prototypes: 4,
        hidden_dim: 5,
        time_steps: 2,
        ..ModelConfig::default()
    }
}

/// The composed model end to end under smoothed cross-entropy, including
/// the gradient with respect to the raw input.
pub fn check_model(seed: u64, variant: Variant, mode: Mode) -> Result<GradReport> {
    let config = toy_model_config(variant);
    let rows = 4;
    let fwd_seed = rng::mix(seed, 0xf0);
    let (model, x, labels) = first_instance(seed, |rng| {
        let mut model = Model::new(config, rng.random())?;
        if let Some(b) = &mut model.backbone {
            randomize_biases([&mut b.fc1, &mut b.fc2], rng);
        }
        if let Head::Spiking(head) = &mut model.head {
            randomize_batchnorm(head, rng);
        }
        let x = normal_matrix(rows, config.input_dim, 1.0, rng);
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..config.num_classes)).collect();
        if let Some(som) = &model.som {
            let features = model.backbone.as_ref().map_or(Ok(x.clone()), |b| b.infer(&x))?;
            let d = distances(&features, &som.bank.prototypes.value, 0.0)?;
            if d.as_slice().iter().any(|&v| v < COINCIDENCE_MARGIN) {
                return Ok(None);
            }
        }
        let ok = model.rectifier_margin(&x, mode, fwd_seed)? >= KINK_MARGIN;
        Ok(ok.then_some((model, x, labels)))
    })?;
    let loss_of = |m: &Model, input: &Matrix| -> Result<f64> {
        Ok(smoothed_ce(&m.output(input, mode, fwd_seed)?, &labels, 0.1)?.0)
    };

    let mut analytic = model.clone();
    let logits = analytic.forward(&x, mode, fwd_seed)?;
    let (_, delta) = smoothed_ce(&logits, &labels, 0.1)?;
    let grad_x = analytic.backward(&delta)?;

    let mut report = GradReport::default();
    let num_x = numeric_gradient(&x, |m| m.as_mut_slice(), |m| loss_of(&model, m))?;
    report.compare("x", grad_x.as_slice(), &num_x)?;
    for (i, (name, param)) in analytic.named_params().into_iter().enumerate() {
        let num = numeric_gradient(
            &model,
            |m| m.named_params_mut().swap_remove(i).1.value.as_mut_slice(),
            |m| loss_of(m, &x),
        )?;
        report.compare(&name, param.grad.as_slice(), &num)?;
    }
    Ok(report)
}
