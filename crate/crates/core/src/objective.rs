//! Label-smoothed cross-entropy, Adam, the plateau learning-rate scheduler,
//! early stopping, and the per-epoch protocol that combines them.
//!
//! Accuracies handed to the scheduler and early-stopping logic are in
//! percent, so the early-stopping tolerance `δ = 0.01` is one hundredth of a
//! percentage point.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::matrix::{Matrix, Param};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub smoothing: f64,
    pub num_classes: usize,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::InvalidConfig("smoothing must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `1 − ε` on the true class, `ε/(C−1)` elsewhere.
pub fn smooth_labels(label: usize, num_classes: usize, smoothing: f64) -> Result<Vec<f64>> {
    if label >= num_classes {
        return Err(Error::LabelOutOfRange {
            label,
            classes: num_classes,
        });
    }
    let off = smoothing / (num_classes - 1) as f64;
    let mut target = vec![off; num_classes];
    target[label] = 1.0 - smoothing;
    Ok(target)
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = libm::log(row.iter().map(|&z| libm::exp(z - max)).sum::<f64>());
    row.iter().map(|&z| z - max - lse).collect()
}

/// Mean smoothed cross-entropy over the batch and its gradient
/// `(softmax(z) − ỹ)/N` with respect to the logits.
pub fn smoothed_ce(logits: &Matrix, labels: &[usize], smoothing: f64) -> Result<(f64, Matrix)> {
    ensure_dim("label count", logits.rows(), labels.len())?;
    if logits.rows() == 0 {
        return Err(Error::Empty("logit batch"));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("logits"));
    }
    let (n, c) = logits.shape();
    let mut grad = Matrix::zeros(n, c);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let target = smooth_labels(label, c, smoothing)?;
        let log_p = log_softmax_row(logits.row(i));
        total -= target.iter().zip(&log_p).map(|(t, lp)| t * lp).sum::<f64>();
        for ((g, lp), t) in grad.row_mut(i).iter_mut().zip(&log_p).zip(&target) {
            *g = (libm::exp(*lp) - t) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// One bias-corrected update over `params`, which must arrive in the
    /// same order and shapes on every call.
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Param>,
    {
        let params: Vec<&mut Param> = params.into_iter().collect();
        if params.is_empty() || params.iter().all(|p| p.is_empty()) {
            return Err(Error::Empty("gradient set"));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        ensure_dim("adam tensor count", self.first.len(), params.len())?;
        for (p, m) in params.iter().zip(&self.first) {
            ensure_dim("adam moment length", m.len(), p.len())?;
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(beta1, f64::from(t));
        let bc2 = 1.0 - libm::pow(beta2, f64::from(t));
        for ((p, m), v) in params.into_iter().zip(&mut self.first).zip(&mut self.second) {
            let grads = p.grad.as_slice().to_vec();
            for (((theta, g), m), v) in p
                .value
                .as_mut_slice()
                .iter_mut()
                .zip(&grads)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= learning_rate * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

/// Halves the learning rate after `patience` consecutive epochs without a
/// strict improvement of the monitored accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub learning_rate: f64,
    pub factor: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub stale_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            factor: 0.5,
            patience: 2,
            best: None,
            stale_epochs: 0,
        }
    }

    /// Reports one epoch's accuracy; returns `true` if the rate was cut.
    pub fn step(&mut self, accuracy: f64) -> bool {
        if self.best.is_none_or(|best| accuracy > best) {
            self.best = Some(accuracy);
            self.stale_epochs = 0;
            return false;
        }
        self.stale_epochs += 1;
        if self.stale_epochs >= self.patience {
            self.learning_rate *= self.factor;
            self.stale_epochs = 0;
            true
        } else {
            false
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops once `window` epochs past the reference epoch `t*` all stay below
/// `A* + δ`. The reference moves only on an improvement of at least `δ`;
/// `best_accuracy` is the running maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub window: usize,
    pub delta: f64,
    pub best_accuracy: f64,
    pub best_epoch: usize,
    last_epoch: usize,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new(5, 0.01)
    }
}

impl EarlyStopState {
    pub fn new(window: usize, delta: f64) -> Self {
        Self {
            window,
            delta,
            best_accuracy: f64::NEG_INFINITY,
            best_epoch: 0,
            last_epoch: 0,
        }
    }

    /// `epoch` is 1-based and must increase by one per call.
    pub fn check(&mut self, epoch: usize, accuracy: f64) -> Result<StopDecision> {
        if epoch != self.last_epoch + 1 {
            return Err(Error::OutOfOrderEpoch {
                expected: self.last_epoch + 1,
                found: epoch,
            });
        }
        self.last_epoch = epoch;
        if accuracy >= self.best_accuracy + self.delta {
            self.best_epoch = epoch;
        }
        self.best_accuracy = self.best_accuracy.max(accuracy);
        Ok(if epoch - self.best_epoch >= self.window {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        })
    }
}

/// What the training loop should do after one validation pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochDecision {
    pub save_checkpoint: bool,
    pub learning_rate: f64,
    pub lr_reduced: bool,
    pub stop: bool,
}

/// Checkpoint-if-better, then scheduler, then early stopping, in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingProtocol {
    pub best_accuracy: f64,
    pub best_epoch: usize,
    pub scheduler: PlateauScheduler,
    pub early_stop: EarlyStopState,
}

impl TrainingProtocol {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            best_accuracy: 0.0,
            best_epoch: 0,
            scheduler: PlateauScheduler::new(learning_rate),
            early_stop: EarlyStopState::default(),
        }
    }

    pub fn observe(&mut self, epoch: usize, val_accuracy_pct: f64) -> Result<EpochDecision> {
        let save_checkpoint = val_accuracy_pct > self.best_accuracy;
        if save_checkpoint {
            self.best_accuracy = val_accuracy_pct;
            self.best_epoch = epoch;
        }
        let lr_reduced = self.scheduler.step(val_accuracy_pct);
        let stop = self.early_stop.check(epoch, val_accuracy_pct)? == StopDecision::Stop;
        Ok(EpochDecision {
            save_checkpoint,
            learning_rate: self.scheduler.learning_rate,
            lr_reduced,
            stop,
        })
    }
}
