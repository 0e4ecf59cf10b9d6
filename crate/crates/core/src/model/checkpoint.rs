//! Binary checkpoint format.
//!
//! Layout (little endian): magic `HVDM`, `u16` version, `u32` length plus
//! JSON-encoded [`ModelConfig`], `u32` parameter count, then per parameter
//! `u32` name length, UTF-8 name, `u32` rank, `u32` per dimension and the
//! values as `f64`. Loading rebuilds the architecture from the config and
//! checks every name and shape against it, so a load-save round trip is
//! bit-exact.

use std::path::Path;

use super::{HyperVDModel, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HVDM";
pub const CHECKPOINT_VERSION: u16 = 1;

impl HyperVDModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (_, p) in self.store.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            let dims = p.shape.dims();
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(origin, 0, "not a model checkpoint (bad magic)"));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(origin, 4, format!("unsupported checkpoint version {version}")));
        }
        let cfg_len = r.u32()? as usize;
        let cfg_at = r.pos;
        let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
            .map_err(|e| Error::format(origin, cfg_at as u64, format!("bad config block: {e}")))?;
        let mut model = HyperVDModel::new(config, 0)
            .map_err(|e| Error::format(origin, cfg_at as u64, format!("invalid config: {e}")))?;
        let count_at = r.pos;
        let count = r.u32()? as usize;
        if count != model.store.len() {
            return Err(Error::format(
                origin,
                count_at as u64,
                format!("expected {} parameters, found {count}", model.store.len()),
            ));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let at = r.pos as u64;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(origin, at, "parameter name is not UTF-8"))?
                .to_owned();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let param = model.store.param(id);
            if name != param.name || dims != param.shape.dims() {
                return Err(Error::format(
                    origin,
                    at,
                    format!(
                        "parameter `{name}` {dims:?} does not match `{}` {:?}",
                        param.name,
                        param.shape.dims()
                    ),
                ));
            }
            let values = model.store.get_mut(id).as_mut_slice();
            for v in values.iter_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format(origin, r.pos as u64, "trailing bytes after parameters"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.origin,
                self.pos as u64,
                format!("truncated: wanted {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
