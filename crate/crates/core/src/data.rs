//! Labeled feature datasets, stratified splitting, and mini-batching.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, purpose};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub n: usize,
    pub d: usize,
    pub format_version: u32,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        if self.class_names.len() < 2 {
            return Err(Error::InvalidConfig("at least two classes required".into()));
        }
        ensure_dim(
            "class_counts length",
            self.class_names.len(),
            self.class_counts.len(),
        )?;
        let unique: BTreeSet<&str> = self.class_names.iter().map(String::as_str).collect();
        if unique.len() != self.class_names.len() {
            return Err(Error::InvalidConfig("class names must be unique".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidConfig("feature dimension must be >= 1".into()));
        }
        ensure_dim("sum of class_counts", self.n, self.class_counts.iter().sum())
    }
}

/// `n` labeled `d`-dimensional feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    features: Vec<f32>,
    labels: Vec<usize>,
    manifest: DatasetManifest,
}

impl FeatureStore {
    pub fn new(manifest: DatasetManifest, features: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        manifest.validate()?;
        ensure_dim("feature rows", manifest.n, features.len() / manifest.d)?;
        ensure_dim("feature values", manifest.n * manifest.d, features.len())?;
        ensure_dim("label count", manifest.n, labels.len())?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature"));
        }
        let classes = manifest.num_classes();
        let mut histogram = vec![0usize; classes];
        for &label in &labels {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            histogram[label] += 1;
        }
        for (c, (&have, &want)) in histogram.iter().zip(&manifest.class_counts).enumerate() {
            if have != want {
                return Err(Error::InvalidConfig(format!(
                    "class {c} has {have} labels but manifest declares {want}"
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            manifest,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.n
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.n == 0
    }

    pub fn dim(&self) -> usize {
        self.manifest.d
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes()
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.manifest.d;
        &self.features[i * d..(i + 1) * d]
    }

    /// Rows widened to `f64`.
    pub fn gather(&self, indices: &[usize]) -> Matrix {
        let d = self.manifest.d;
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend(self.row(i).iter().map(|&v| f64::from(v)));
        }
        Matrix::from_vec(indices.len(), d, data).expect("row-major gather")
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Subset::Train),
            "val" => Some(Subset::Val),
            "test" => Some(Subset::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train + self.val + self.test;
        if !(libm::fabs(sum - 1.0) <= 1e-9) {
            return Err(Error::RatiosNotNormalized(sum));
        }
        if [self.train, self.val, self.test].iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidConfig("split ratios must be positive".into()));
        }
        Ok(())
    }

    /// Per-class `(train, val, test)` counts of the two-stage split.
    ///
    /// Stage one keeps `floor(train·count)` records for training. Stage two
    /// divides the remainder between test and validation in proportion
    /// `test / (val + test)`, flooring the test share. Every count lands
    /// within one record of its real-valued target.
    pub fn class_counts(&self, count: usize) -> [usize; 3] {
        // headroom for products like 0.7 * 1050 landing a hair under an integer
        const SLACK: f64 = 1e-9;
        let train = libm::floor(self.train * count as f64 + SLACK) as usize;
        let rest = count - train.min(count);
        let test_share = self.test / (self.val + self.test);
        let test = (libm::floor(test_share * rest as f64 + SLACK) as usize).min(rest);
        [train.min(count), rest - test, test]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub tags: Vec<Subset>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl SplitAssignment {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Record indices of one subset in ascending order.
    pub fn indices(&self, subset: Subset) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == subset)
            .map(|(i, _)| i)
            .collect()
    }

    /// `counts[class] = [train, val, test]`.
    pub fn per_class_counts(&self, labels: &[usize], num_classes: usize) -> Vec<[usize; 3]> {
        let mut counts = vec![[0usize; 3]; num_classes];
        for (&tag, &label) in self.tags.iter().zip(labels) {
            counts[label][tag as usize] += 1;
        }
        counts
    }
}

/// Deterministic stratified train/val/test partition.
pub fn stratified_split(
    labels: &[usize],
    num_classes: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment> {
    ratios.validate()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        by_class[label].push(i);
    }
    let mut tags = vec![Subset::Train; labels.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < Subset::ALL.len() {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                needed: Subset::ALL.len(),
            });
        }
        let [train, val, _test] = ratios.class_counts(members.len());
        let mut rng = rng::stream(rng::mix(seed, class as u64), purpose::SPLIT);
        members.shuffle(&mut rng);
        let (_, temp) = members.split_at_mut(train);
        // second stage reshuffles the temporary pool before carving val/test
        temp.shuffle(&mut rng);
        for (k, &record) in temp.iter().enumerate() {
            tags[record] = if k < val { Subset::Val } else { Subset::Test };
        }
    }
    Ok(SplitAssignment { tags, seed, ratios })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Record-index plan for one epoch. The final chunk may be short.
pub fn batch_plan(
    subset: &[usize],
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    if subset.is_empty() {
        return Err(Error::Empty("subset"));
    }
    let mut order = subset.to_vec();
    order.sort_unstable();
    if shuffle {
        let mut rng = rng::stream(rng::mix(seed, epoch), purpose::SHUFFLE);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn make_batches(
    store: &FeatureStore,
    subset: &[usize],
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if let Some(&bad) = subset.iter().find(|&&i| i >= store.len()) {
        return Err(Error::DimensionMismatch {
            what: "record index within store",
            expected: store.len(),
            found: bad,
        });
    }
    Ok(batch_plan(subset, batch_size, shuffle, seed, epoch)?
        .into_iter()
        .map(|indices| Batch {
            features: store.gather(&indices),
            labels: store.gather_labels(&indices),
            indices,
        })
        .collect())
}
