//! Versioned binary checkpoint: architecture, parameters, class centers and
//! the hash of the configuration that produced them. All integers and floats
//! are little-endian.
//!
//! ```text
//! "CVCKPT\0\0" | u32 version | u32 n + arch JSON | u64 n + n f64 theta
//! | u32 K | u32 dim | f64 alpha | K*dim f64 centers | [u8; 32] config hash
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::loss::ClassCenters;
use super::network::{Arch, EmbeddingModel};

const MAGIC: &[u8; 8] = b"CVCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: EmbeddingModel,
    pub centers: ClassCenters,
    pub config_hash: [u8; 32],
}

pub fn config_hash(canonical_config: &[u8]) -> [u8; 32] {
    Sha256::digest(canonical_config).into()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = serde_json::to_vec(self.model.arch()).expect("arch serializes");
        let theta = self.model.params();
        let mut out = Vec::with_capacity(64 + arch.len() + 8 * (theta.len() + self.centers.values().len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        out.extend_from_slice(&arch);
        out.extend_from_slice(&(theta.len() as u64).to_le_bytes());
        theta.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend_from_slice(&(self.centers.k() as u32).to_le_bytes());
        out.extend_from_slice(&(self.centers.dim() as u32).to_le_bytes());
        out.extend_from_slice(&self.centers.alpha.to_le_bytes());
        self.centers
            .values()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend_from_slice(&self.config_hash);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        let arch: Arch =
            serde_json::from_slice(r.take(n)?).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let n = r.u64()? as usize;
        let theta = r.f64s(n)?;
        let (k, dim) = (r.u32()? as usize, r.u32()? as usize);
        let alpha = r.f64()?;
        let centers = ClassCenters::new(k, dim, r.f64s(k * dim)?, alpha)?;
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        let model = EmbeddingModel::from_parts(arch, theta)?;
        if (k, dim) != (model.arch().classes, model.arch().embed_dim) {
            return Err(Error::format("checkpoint", "centers do not match the architecture"));
        }
        Ok(Self {
            model,
            centers,
            config_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format("checkpoint", "length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
