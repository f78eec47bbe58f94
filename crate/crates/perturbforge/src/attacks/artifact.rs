//! Stored perturbation tensors.
//!
//! Layout: magic "UPRT", u16 version, u8 dtype tag (1 = f32), u8 ndims,
//! u32 dims, then the f32 little-endian payload.

use std::fs;
use std::path::Path;

use crate::tensor::Tensor;

use super::AttackError;

pub const ARTIFACT_MAGIC: &[u8; 4] = b"UPRT";
pub const ARTIFACT_VERSION: u16 = 1;
const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationArtifact {
    pub tensor: Tensor,
}

impl PerturbationArtifact {
    pub fn new(tensor: Tensor) -> Self {
        PerturbationArtifact { tensor }
    }

    /// FNV-1a hash of the serialized payload; identifies an artifact in
    /// reports so every record of a run can prove it shares one perturbation.
    pub fn content_hash(&self) -> String {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |byte: u8| {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        };
        for &d in self.tensor.shape() {
            for b in (d as u32).to_le_bytes() {
                eat(b);
            }
        }
        for v in self.tensor.data() {
            for b in v.to_le_bytes() {
                eat(b);
            }
        }
        format!("{hash:016x}")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AttackError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| AttackError::Report {
                    path: parent.to_path_buf(),
                    detail: e.to_string(),
                })?;
            }
        }
        let shape = self.tensor.shape();
        let mut out = Vec::with_capacity(8 + 4 * shape.len() + 4 * self.tensor.numel());
        out.extend_from_slice(ARTIFACT_MAGIC);
        out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out).map_err(|e| AttackError::Report {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AttackError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| AttackError::Report {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let fail = |detail: String| AttackError::Report {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < 8 {
            return Err(fail("truncated header".into()));
        }
        if &bytes[..4] != ARTIFACT_MAGIC {
            return Err(fail(format!(
                "bad magic {:02x?}, expected \"UPRT\"",
                &bytes[..4]
            )));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != ARTIFACT_VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        if bytes[6] != DTYPE_F32 {
            return Err(fail(format!("unsupported dtype tag {}", bytes[6])));
        }
        let ndims = bytes[7] as usize;
        let mut pos = 8;
        if bytes.len() < pos + 4 * ndims {
            return Err(fail("truncated dims".into()));
        }
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
            pos += 4;
        }
        let count: usize = shape.iter().product();
        if bytes.len() != pos + 4 * count {
            return Err(fail(format!(
                "payload size {} does not match shape {shape:?}",
                bytes.len() - pos
            )));
        }
        let data: Vec<f32> = bytes[pos..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| AttackError::Report {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok(PerturbationArtifact { tensor })
    }
}
