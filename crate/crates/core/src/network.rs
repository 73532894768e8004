//! Composed models: `backbone → soft SOM → spiking head` and its ablations.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backbone::{ToyBackbone, ToyBackboneConfig};
use crate::error::{ensure_dim, Error, Result};
use crate::linear::Linear;
use crate::matrix::{Matrix, Param};
use crate::rng::{self, purpose};
use crate::softsom::{init_prototypes, GradientMode, PrototypeInit, SoftSom, SomConfig};
use crate::spikehead::{SpikeHead, SpikeHeadConfig};
use crate::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// soft SOM + spiking head
    Full,
    /// features → spiking head
    NoSomSpiking,
    /// soft SOM → affine classifier
    SomLinear,
    /// features → affine classifier
    NoSomLinear,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoSomSpiking,
        Variant::SomLinear,
        Variant::NoSomLinear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSomSpiking => "no_som_spiking",
            Variant::SomLinear => "som_linear",
            Variant::NoSomLinear => "no_som_linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn has_som(self) -> bool {
        matches!(self, Variant::Full | Variant::SomLinear)
    }

    pub fn has_spiking_head(self) -> bool {
        matches!(self, Variant::Full | Variant::NoSomSpiking)
    }
}

impl core::fmt::Display for Variant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Width of the model input (raw width when a toy backbone is present).
    pub input_dim: usize,
    pub num_classes: usize,
    pub backbone: Option<ToyBackboneConfig>,
    pub prototypes: usize,
    pub dropout: f64,
    pub temperature: f64,
    pub distance_eps: f64,
    pub gradient_mode: GradientMode,
    pub hidden_dim: usize,
    pub time_steps: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub noise_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let som = SomConfig::default();
        let head = SpikeHeadConfig::default();
        Self {
            variant: Variant::Full,
            input_dim: som.input_dim,
            num_classes: head.output_dim,
            backbone: None,
            prototypes: som.prototypes,
            dropout: som.dropout,
            temperature: som.temperature,
            distance_eps: som.distance_eps,
            gradient_mode: som.gradient_mode,
            hidden_dim: head.hidden_dim,
            time_steps: head.time_steps,
            bn_momentum: head.bn_momentum,
            bn_eps: head.bn_eps,
            noise_std: head.noise_std,
        }
    }
}

impl ModelConfig {
    /// Width of the vectors entering the SOM (or the head, without a SOM).
    pub fn feature_dim(&self) -> usize {
        self.backbone.map_or(self.input_dim, |b| b.output_dim)
    }

    pub fn som_config(&self) -> SomConfig {
        SomConfig {
            prototypes: self.prototypes,
            input_dim: self.feature_dim(),
            dropout: self.dropout,
            temperature: self.temperature,
            distance_eps: self.distance_eps,
            gradient_mode: self.gradient_mode,
        }
    }

    pub fn head_input_dim(&self) -> usize {
        if self.variant.has_som() {
            self.prototypes
        } else {
            self.feature_dim()
        }
    }

    pub fn head_config(&self) -> SpikeHeadConfig {
        SpikeHeadConfig {
            input_dim: self.head_input_dim(),
            hidden_dim: self.hidden_dim,
            output_dim: self.num_classes,
            time_steps: self.time_steps,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
            noise_std: self.noise_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be >= 2".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be >= 1".into()));
        }
        if let Some(b) = self.backbone {
            ensure_dim("backbone input width", self.input_dim, b.input_dim)?;
            if b.hidden_dim == 0 || b.output_dim == 0 {
                return Err(Error::InvalidConfig("backbone widths must be >= 1".into()));
            }
        }
        if self.variant.has_som() {
            self.som_config().validate()?;
        }
        if self.variant.has_spiking_head() {
            self.head_config().validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Spiking(SpikeHead),
    Linear {
        layer: Linear,
        cache: Option<Matrix>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub backbone: Option<ToyBackbone>,
    pub som: Option<SoftSom>,
    pub head: Head,
}

fn stage_seed(seed: u64, stage: u64) -> u64 {
    rng::mix(seed, stage)
}

impl Model {
    /// Fresh model; prototypes start from `N(0, 1/d)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let backbone = config
            .backbone
            .map(|b| ToyBackbone::new(b, stage_seed(seed, 1)));
        let som = if config.variant.has_som() {
            let som_config = config.som_config();
            let bank = init_prototypes(
                som_config.prototypes,
                som_config.input_dim,
                PrototypeInit::Gaussian {
                    seed: stage_seed(seed, 2),
                },
            )?;
            Some(SoftSom::new(som_config, bank)?)
        } else {
            None
        };
        let head = if config.variant.has_spiking_head() {
            Head::Spiking(SpikeHead::new(config.head_config(), stage_seed(seed, 3))?)
        } else {
            let mut init = rng::stream(stage_seed(seed, 3), purpose::INIT);
            Head::Linear {
                layer: Linear::he_normal(config.head_input_dim(), config.num_classes, &mut init),
                cache: None,
            }
        };
        Ok(Self {
            config,
            backbone,
            som,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Replaces the prototypes with `K` distinct rows of `batch`, after the
    /// batch has been passed through the backbone (if any).
    pub fn init_prototypes_from(&mut self, batch: &Matrix, seed: u64) -> Result<()> {
        let features = match &self.backbone {
            Some(b) => b.infer(batch)?,
            None => batch.clone(),
        };
        if let Some(som) = &mut self.som {
            som.bank = init_prototypes(
                som.config.prototypes,
                som.config.input_dim,
                PrototypeInit::Sample {
                    batch: &features,
                    seed,
                },
            )?;
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        ensure_dim("model input width", self.config.input_dim, x.cols())?;
        if x.rows() == 0 {
            return Err(Error::Empty("input batch"));
        }
        Ok(())
    }

    /// Logits without caching or running-statistic updates.
    pub fn output(&self, x: &Matrix, mode: Mode, seed: u64) -> Result<Matrix> {
        self.check_input(x)?;
        let features = match &self.backbone {
            Some(b) => b.infer(x)?,
            None => x.clone(),
        };
        let hidden = match &self.som {
            Some(som) => som.infer(&features, mode.is_train(), stage_seed(seed, 2))?,
            None => features,
        };
        let logits = match &self.head {
            Head::Spiking(head) => head.infer(&hidden, mode, stage_seed(seed, 3))?,
            Head::Linear { layer, .. } => layer.forward(&hidden)?,
        };
        finite(logits)
    }

    /// Smallest `|pre-activation|` at any rectifier; gradient checks keep
    /// this well above the finite-difference step.
    pub fn rectifier_margin(&self, x: &Matrix, mode: Mode, seed: u64) -> Result<f64> {
        self.check_input(x)?;
        let mut margin = f64::INFINITY;
        let features = match &self.backbone {
            Some(b) => {
                margin = margin.min(b.rectifier_margin(x)?);
                b.infer(x)?
            }
            None => x.clone(),
        };
        let hidden = match &self.som {
            Some(som) => som.infer(&features, mode.is_train(), stage_seed(seed, 2))?,
            None => features,
        };
        if let Head::Spiking(head) = &self.head {
            margin = margin.min(head.rectifier_margin(&hidden, mode, stage_seed(seed, 3))?);
        }
        Ok(margin)
    }

    /// Eval-mode logits; never mutates the model.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.output(x, Mode::Eval, 0)
    }

    /// Forward pass that caches every stage for [`Model::backward`].
    pub fn forward(&mut self, x: &Matrix, mode: Mode, seed: u64) -> Result<Matrix> {
        self.check_input(x)?;
        let features = match &mut self.backbone {
            Some(b) => b.forward(x)?,
            None => x.clone(),
        };
        let hidden = match &mut self.som {
            Some(som) => som.forward(&features, mode.is_train(), stage_seed(seed, 2))?,
            None => features,
        };
        let logits = match &mut self.head {
            Head::Spiking(head) => head.forward(&hidden, mode, stage_seed(seed, 3))?,
            Head::Linear { layer, cache } => {
                let out = layer.forward(&hidden)?;
                *cache = Some(hidden);
                out
            }
        };
        finite(logits)
    }

    /// Accumulates gradients into every trainable tensor; returns `∂L/∂x`.
    pub fn backward(&mut self, delta: &Matrix) -> Result<Matrix> {
        ensure_dim("logit gradient width", self.config.num_classes, delta.cols())?;
        let mut grad = match &mut self.head {
            Head::Spiking(head) => head.backward(delta)?,
            Head::Linear { layer, cache } => {
                let input = cache.take().ok_or(Error::MissingCache("linear head"))?;
                layer.backward(&input, delta)?
            }
        };
        if let Some(som) = &mut self.som {
            grad = som.backward(&grad)?;
        }
        if let Some(b) = &mut self.backbone {
            grad = b.backward(&grad)?;
        }
        Ok(grad)
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        if let Some(b) = &self.backbone {
            out.extend(b.params().into_iter().map(|(n, p)| (format!("backbone.{n}"), p)));
        }
        if let Some(som) = &self.som {
            out.extend(som.params().into_iter().map(|(n, p)| (format!("som.{n}"), p)));
        }
        match &self.head {
            Head::Spiking(h) => {
                out.extend(h.params().into_iter().map(|(n, p)| (format!("head.{n}"), p)))
            }
            Head::Linear { layer, .. } => {
                out.push(("classifier.weight".into(), &layer.weight));
                out.push(("classifier.bias".into(), &layer.bias));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        if let Some(b) = &mut self.backbone {
            out.extend(
                b.params_mut()
                    .into_iter()
                    .map(|(n, p)| (format!("backbone.{n}"), p)),
            );
        }
        if let Some(som) = &mut self.som {
            out.extend(som.params_mut().into_iter().map(|(n, p)| (format!("som.{n}"), p)));
        }
        match &mut self.head {
            Head::Spiking(h) => {
                out.extend(h.params_mut().into_iter().map(|(n, p)| (format!("head.{n}"), p)))
            }
            Head::Linear { layer, .. } => {
                out.push(("classifier.weight".into(), &mut layer.weight));
                out.push(("classifier.bias".into(), &mut layer.bias));
            }
        }
        out
    }

    /// Non-trainable state (batchnorm running statistics).
    pub fn named_buffers(&self) -> Vec<(String, &Vec<f64>)> {
        match &self.head {
            Head::Spiking(h) => h
                .buffers()
                .into_iter()
                .map(|(n, b)| (format!("head.{n}"), b))
                .collect(),
            Head::Linear { .. } => Vec::new(),
        }
    }

    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        match &mut self.head {
            Head::Spiking(h) => h
                .buffers_mut()
                .into_iter()
                .map(|(n, b)| (format!("head.{n}"), b))
                .collect(),
            Head::Linear { .. } => Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> ParamCount {
        let trainable: usize = self.named_params().iter().map(|(_, p)| p.len()).sum();
        let buffers: usize = self.named_buffers().iter().map(|(_, b)| b.len()).sum();
        ParamCount {
            total: trainable + buffers,
            trainable,
        }
    }
}

fn finite(logits: Matrix) -> Result<Matrix> {
    if logits.all_finite() {
        Ok(logits)
    } else {
        Err(Error::NonFinite("logits"))
    }
}
