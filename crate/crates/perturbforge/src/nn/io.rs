//! Checkpoint file format.
//!
//! Layout: magic "PFCK", u16 version, u32 descriptor length, UTF-8 JSON
//! descriptor (spec + training metadata), u64 weight count, then f32
//! little-endian weights. The whole file is validated before a checkpoint is
//! constructed, so a truncated file never yields a partial checkpoint.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Checkpoint, ModelError, ModelSpec, TrainMeta};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PFCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    spec: ModelSpec,
    meta: TrainMeta,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| ModelError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let descriptor = serde_json::to_vec(&Descriptor {
        spec: ckpt.spec.clone(),
        meta: ckpt.meta.clone(),
    })
    .expect("descriptor serializes");
    let mut out = Vec::with_capacity(14 + descriptor.len() + 4 * ckpt.weights.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(&descriptor);
    out.extend_from_slice(&(ckpt.weights.len() as u64).to_le_bytes());
    for w in &ckpt.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    fs::write(path, out).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let format_err = |detail: String| ModelError::Format {
        path: path.to_path_buf(),
        detail,
    };
    let need = |have: usize, want: usize, what: &str| {
        if have < want {
            Err(format_err(format!(
                "truncated file: need {want} bytes for {what}, have {have}"
            )))
        } else {
            Ok(())
        }
    };

    need(bytes.len(), 4, "magic")?;
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(format_err(format!(
            "bad magic {:02x?}, expected {:?}",
            &bytes[..4],
            std::str::from_utf8(CHECKPOINT_MAGIC).unwrap()
        )));
    }
    need(bytes.len(), 6, "version")?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(format_err(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    need(bytes.len(), 10, "descriptor length")?;
    let desc_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    need(bytes.len(), 10 + desc_len, "descriptor")?;
    let descriptor: Descriptor = serde_json::from_slice(&bytes[10..10 + desc_len])
        .map_err(|e| format_err(format!("descriptor: {e}")))?;
    let mut pos = 10 + desc_len;
    need(bytes.len(), pos + 8, "weight count")?;
    let count = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
    pos += 8;
    need(bytes.len(), pos + 4 * count, "weights")?;
    if bytes.len() != pos + 4 * count {
        return Err(format_err(format!(
            "{} trailing bytes after weights",
            bytes.len() - pos - 4 * count
        )));
    }
    let weights: Vec<f32> = bytes[pos..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if count != descriptor.spec.parameter_count() {
        return Err(format_err(format!(
            "weight count {count} does not match spec parameter count {}",
            descriptor.spec.parameter_count()
        )));
    }
    Checkpoint::new(descriptor.spec, weights, descriptor.meta)
}
