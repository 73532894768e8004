//! On-disk feature stores.
//!
//! A store is a directory holding `manifest.json`, `features.f32`
//! (little-endian 32-bit reals, row-major `n × d`) and `labels.u16`
//! (little-endian class indices). The manifest records a CRC-32 of each
//! binary file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use somspike_core::data::{DatasetManifest, FeatureStore, SplitAssignment};
use somspike_core::Error;

use crate::error::{IoError, IoResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.f32";
pub const LABELS_FILE: &str = "labels.u16";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreManifest {
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub n: usize,
    pub d: usize,
    pub format_version: u32,
    /// File name → CRC-32.
    pub checksums: BTreeMap<String, u32>,
}

impl StoreManifest {
    pub fn dataset(&self) -> DatasetManifest {
        DatasetManifest {
            class_names: self.class_names.clone(),
            class_counts: self.class_counts.clone(),
            n: self.n,
            d: self.d,
            format_version: self.format_version,
        }
    }
}

fn read(path: &Path) -> IoResult<Vec<u8>> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

fn verify(manifest: &StoreManifest, file: &str, bytes: &[u8]) -> IoResult<()> {
    let found = crc32fast::hash(bytes);
    match manifest.checksums.get(file) {
        Some(&expected) if expected != found => Err(IoError::ChecksumMismatch {
            file: file.to_string(),
            expected,
            found,
        }),
        _ => Ok(()),
    }
}

pub fn read_manifest(dir: &Path) -> IoResult<StoreManifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = read(&path)?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json { path, source })
}

pub fn load_feature_store(dir: &Path) -> IoResult<FeatureStore> {
    let manifest = read_manifest(dir)?;
    let dataset = manifest.dataset();
    dataset.validate()?;

    let feature_bytes = read(&dir.join(FEATURES_FILE))?;
    let label_bytes = read(&dir.join(LABELS_FILE))?;
    verify(&manifest, FEATURES_FILE, &feature_bytes)?;
    verify(&manifest, LABELS_FILE, &label_bytes)?;

    if feature_bytes.len() % 4 != 0 {
        return Err(IoError::Truncated(format!("{FEATURES_FILE} is not a whole number of f32")));
    }
    if label_bytes.len() % 2 != 0 {
        return Err(IoError::Truncated(format!("{LABELS_FILE} is not a whole number of u16")));
    }
    let features: Vec<f32> = feature_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let labels: Vec<usize> = label_bytes
        .chunks_exact(2)
        .map(|c| usize::from(u16::from_le_bytes([c[0], c[1]])))
        .collect();
    if labels.len() != dataset.n {
        return Err(Error::DimensionMismatch {
            what: "label count",
            expected: dataset.n,
            found: labels.len(),
        }
        .into());
    }
    Ok(FeatureStore::new(dataset, features, labels)?)
}

/// Writes `store` under `dir`, creating it if needed.
pub fn write_feature_store(dir: &Path, store: &FeatureStore) -> IoResult<()> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    if store.num_classes() > usize::from(u16::MAX) + 1 {
        return Err(Error::InvalidConfig("labels.u16 holds at most 65536 classes".into()).into());
    }
    let features: Vec<u8> = store.features().iter().flat_map(|v| v.to_le_bytes()).collect();
    let labels: Vec<u8> = store
        .labels()
        .iter()
        .flat_map(|&l| (l as u16).to_le_bytes())
        .collect();
    let m = store.manifest();
    let manifest = StoreManifest {
        class_names: m.class_names.clone(),
        class_counts: m.class_counts.clone(),
        n: m.n,
        d: m.d,
        format_version: m.format_version,
        checksums: BTreeMap::from([
            (FEATURES_FILE.to_string(), crc32fast::hash(&features)),
            (LABELS_FILE.to_string(), crc32fast::hash(&labels)),
        ]),
    };
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| IoError::io(path, e))
    };
    write(FEATURES_FILE, &features)?;
    write(LABELS_FILE, &labels)?;
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write(MANIFEST_FILE, &json)
}

pub fn save_split(path: &Path, split: &SplitAssignment) -> IoResult<()> {
    let json = serde_json::to_vec_pretty(split).expect("split serializes");
    fs::write(path, json).map_err(|e| IoError::io(path, e))
}

/// Reads a split and checks it covers exactly `n` records.
pub fn load_split(path: &Path, n: usize) -> IoResult<SplitAssignment> {
    let bytes = read(path)?;
    let split: SplitAssignment = serde_json::from_slice(&bytes).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if split.len() != n {
        return Err(Error::DimensionMismatch {
            what: "split length vs store records",
            expected: n,
            found: split.len(),
        }
        .into());
    }
    Ok(split)
}
