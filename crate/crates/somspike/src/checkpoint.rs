//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SOMSPIKE"           8 bytes
//! format_version       u32
//! metadata length      u64, then that many bytes of JSON
//! tensor count         u32
//! per tensor           u32 name length, name (UTF-8), u64 rows, u64 cols,
//!                      rows·cols f64 values
//! ```
//!
//! Tensors cover every trainable parameter plus the batchnorm running
//! statistics, so a reloaded model evaluates bit-identically.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use somspike_core::network::{Model, ModelConfig, Variant};

use crate::error::{IoError, IoResult};

pub const MAGIC: &[u8; 8] = b"SOMSPIKE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub variant: Variant,
    pub model: ModelConfig,
    pub epoch: usize,
    /// Percent.
    pub best_val_accuracy: f64,
}

impl CheckpointMeta {
    pub fn new(model: &Model, epoch: usize, best_val_accuracy: f64) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            variant: model.variant(),
            model: *model.config(),
            epoch,
            best_val_accuracy,
        }
    }
}

fn tensors(model: &Model) -> Vec<(String, usize, usize, Vec<f64>)> {
    let mut out: Vec<_> = model
        .named_params()
        .into_iter()
        .map(|(name, p)| (name, p.value.rows(), p.value.cols(), p.value.as_slice().to_vec()))
        .collect();
    out.extend(
        model
            .named_buffers()
            .into_iter()
            .map(|(name, b)| (name, 1, b.len(), b.clone())),
    );
    out
}

pub fn encode(model: &Model, meta: &CheckpointMeta) -> Vec<u8> {
    let json = serde_json::to_vec(meta).expect("metadata serializes");
    let tensors = tensors(model);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, rows, cols, values) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(rows as u64).to_le_bytes());
        buf.extend_from_slice(&(cols as u64).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint(model: &Model, meta: &CheckpointMeta, path: &Path) -> IoResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = Path::new(&tmp_name);
    let mut file = fs::File::create(tmp).map_err(|e| IoError::io(tmp, e))?;
    file.write_all(&encode(model, meta))
        .and_then(|_| file.sync_all())
        .map_err(|e| IoError::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| IoError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> IoResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| IoError::Truncated(format!("checkpoint ends inside {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> IoResult<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> IoResult<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> IoResult<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| IoError::Truncated(format!("{what} overflows")))
    }
}

pub fn decode(bytes: &[u8], expected: Option<Variant>) -> IoResult<(Model, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(IoError::VersionMismatch("missing SOMSPIKE header".into()));
    }
    r.take(MAGIC.len(), "header")?;
    let version = r.u32("format version")?;
    if version != CHECKPOINT_VERSION {
        return Err(IoError::VersionMismatch(format!(
            "file has format {version}, reader supports {CHECKPOINT_VERSION}"
        )));
    }
    let meta_len = r.len("metadata length")?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|source| IoError::Json {
            path: "<checkpoint metadata>".into(),
            source,
        })?;
    if meta.variant != meta.model.variant {
        return Err(IoError::VariantMismatch {
            expected: meta.variant.to_string(),
            found: meta.model.variant.to_string(),
        });
    }
    if let Some(want) = expected.filter(|&v| v != meta.variant) {
        return Err(IoError::VariantMismatch {
            expected: want.to_string(),
            found: meta.variant.to_string(),
        });
    }

    let mut model = Model::new(meta.model, 0)?;
    let count = r.u32("tensor count")? as usize;
    let mut loaded = std::collections::BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| IoError::Truncated("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.len("tensor rows")?;
        let cols = r.len("tensor cols")?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| IoError::Truncated(format!("tensor {name} size overflows")))?;
        let values: Vec<f64> = r
            .take(n, &format!("tensor {name}"))?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        loaded.insert(name, ((rows, cols), values));
    }
    if r.pos != bytes.len() {
        return Err(IoError::Truncated("trailing bytes after last tensor".into()));
    }

    let mut take = |name: &str, shape: (usize, usize)| -> IoResult<Vec<f64>> {
        let (found, values) = loaded
            .remove(name)
            .ok_or_else(|| IoError::TensorSet(format!("missing tensor {name}")))?;
        if found != shape {
            return Err(IoError::ShapeMismatch {
                name: name.to_string(),
                expected: shape,
                found,
            });
        }
        Ok(values)
    };
    for (name, param) in model.named_params_mut() {
        let values = take(&name, param.value.shape())?;
        param.value.as_mut_slice().copy_from_slice(&values);
    }
    for (name, buffer) in model.named_buffers_mut() {
        *buffer = take(&name, (1, buffer.len()))?;
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(IoError::TensorSet(format!("unexpected tensor {extra}")));
    }
    Ok((model, meta))
}

/// Loads a checkpoint; `expected` rejects a different variant.
pub fn load_checkpoint(path: &Path, expected: Option<Variant>) -> IoResult<(Model, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode(&bytes, expected)
}
