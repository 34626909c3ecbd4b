//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "DPCK"
//! version      u32      1
//! n_sizes      u32
//! sizes        n_sizes x u64   layer widths, input first
//! hash_len     u32
//! config_hash  hash_len bytes (UTF-8 hex)
//! n_params     u64
//! params       n_params x f64
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const MAGIC: &[u8; 4] = b"DPCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub config_hash: String,
}

pub fn encode(model: &ModelParams, config_hash: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * model.dim());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.sizes().len() as u32).to_le_bytes());
    for &s in model.sizes() {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    out.extend_from_slice(&(config_hash.len() as u32).to_le_bytes());
    out.extend_from_slice(config_hash.as_bytes());
    out.extend_from_slice(&(model.dim() as u64).to_le_bytes());
    for v in model.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::Format {
            offset: self.pos,
            detail: format!("checkpoint truncated: need {n} more bytes"),
        })?;
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format { offset: 0, detail: "not a checkpoint (bad magic)".into() });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format { offset: 4, detail: format!("unsupported version {version}") });
    }
    let n_sizes = r.u32()? as usize;
    let sizes = (0..n_sizes).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let hash_len = r.u32()? as usize;
    let hash_at = r.pos;
    let config_hash = String::from_utf8(r.take(hash_len)?.to_vec())
        .map_err(|_| Error::Format { offset: hash_at, detail: "config hash is not UTF-8".into() })?;
    let n_params = r.u64()? as usize;
    let values = (0..n_params)
        .map(|_| r.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
        .collect::<Result<Vec<_>>>()?;
    let model = ModelParams::from_flat(&sizes, values)?;
    Ok(Checkpoint { model, config_hash })
}

pub fn save(path: &Path, model: &ModelParams, config_hash: &str) -> Result<()> {
    std::fs::write(path, encode(model, config_hash))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}
