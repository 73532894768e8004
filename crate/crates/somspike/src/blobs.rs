//! Seeded Gaussian-blob feature stores for smoke runs.

use rand_distr::{Distribution, Normal};
use somspike_core::data::{DatasetManifest, FeatureStore, FORMAT_VERSION};
use somspike_core::{rng, Result};

const BLOB_STREAM: u64 = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Class `c` is centered at `separation · e_c`.
    pub separation: f64,
    pub std: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 16,
            per_class: 200,
            separation: 4.0,
            std: 1.0,
        }
    }
}

/// Records are interleaved by class: record `i` has label `i mod C`.
pub fn gaussian_blobs(spec: BlobSpec, seed: u64) -> Result<FeatureStore> {
    let mut rng = rng::stream(seed, BLOB_STREAM);
    let noise = Normal::new(0.0, spec.std)
        .map_err(|_| somspike_core::Error::InvalidConfig("blob std must be finite and >= 0".into()))?;
    let n = spec.classes * spec.per_class;
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.classes;
        for j in 0..spec.dim {
            let center = if j == class % spec.dim { spec.separation } else { 0.0 };
            features.push((center + noise.sample(&mut rng)) as f32);
        }
        labels.push(class);
    }
    let manifest = DatasetManifest {
        class_names: (0..spec.classes).map(|c| format!("blob{c}")).collect(),
        class_counts: vec![spec.per_class; spec.classes],
        n,
        d: spec.dim,
        format_version: FORMAT_VERSION,
    };
    FeatureStore::new(manifest, features, labels)
}

/// Training setup for the default blob store: the full model with `K = 8`
/// prototypes and a 32-wide spiking head. The softer temperature and higher
/// learning rate keep every class logit alive through the output rectifier
/// on this small problem.
pub fn toy_train_config(seed: u64) -> crate::config::TrainConfig {
    use somspike_core::network::{ModelConfig, Variant};
    use somspike_core::objective::AdamConfig;
    let spec = BlobSpec::default();
    crate::config::TrainConfig {
        seed,
        model: ModelConfig {
            variant: Variant::Full,
            input_dim: spec.dim,
            num_classes: spec.classes,
            prototypes: 8,
            hidden_dim: 32,
            temperature: 8.0,
            ..ModelConfig::default()
        },
        adam: AdamConfig {
            learning_rate: 2e-2,
            ..AdamConfig::default()
        },
        ..crate::config::TrainConfig::default()
    }
}
