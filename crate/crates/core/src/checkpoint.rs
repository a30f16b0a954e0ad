//! Binary snapshot container.
//!
//! Layout (all integers and floats little-endian):
//!
//! | offset | size  | field                                   |
//! |--------|-------|-----------------------------------------|
//! | 0      | 4     | magic `CATM`                            |
//! | 4      | 4     | format version (u32, currently 1)       |
//! | 8      | 8     | config hash (u64)                       |
//! | 16     | 4     | epoch (u32)                             |
//! | 20     | 4     | config JSON length `L` (u32)            |
//! | 24     | L     | config as UTF-8 JSON                    |
//! | 24+L   | 4     | tensor count (u32, currently 6)         |
//!
//! followed by one record per tensor in `TENSOR_NAMES` order: `ndim` (u32),
//! `ndim` dimensions (u64 each), then `prod(dims)` IEEE-754 doubles.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelSnapshot, Params};

pub const MAGIC: &[u8; 4] = b"CATM";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(snapshot: &ModelSnapshot) -> Vec<u8> {
    let config = serde_json::to_vec(snapshot.config()).expect("config serialises");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&snapshot.config_hash().to_le_bytes());
    out.extend_from_slice(&snapshot.epoch().to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let shapes = Params::shapes(snapshot.config());
    let tensors = snapshot.params().tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (shape, data) in shapes.iter().zip(tensors) {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    label: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format {
                path: self.label.to_string(),
                message: format!("truncated at byte {}", self.pos),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            path: self.label.to_string(),
            message: message.into(),
        })
    }
}

pub fn decode(bytes: &[u8], label: &str) -> Result<ModelSnapshot> {
    let mut c = Cursor { bytes, pos: 0, label };
    if c.take(4)? != MAGIC {
        return c.fail("bad magic, not a CATM snapshot");
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return c.fail(format!("unsupported format version {version}"));
    }
    let hash = c.u64()?;
    let epoch = c.u32()?;
    let len = c.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(len)?)?;
    if config.hash() != hash {
        return c.fail("config hash does not match embedded config");
    }
    config.validate()?;
    let shapes = Params::shapes(&config);
    let count = c.u32()? as usize;
    if count != shapes.len() {
        return c.fail(format!("expected {} tensors, found {count}", shapes.len()));
    }
    let mut params = Params::zeros(&config);
    for (i, (shape, tensor)) in shapes.iter().zip(params.tensors_mut()).enumerate() {
        let ndim = c.u32()? as usize;
        let dims = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return c.fail(format!("tensor {i} has shape {dims:?}, config implies {shape:?}"));
        }
        for v in tensor.iter_mut() {
            *v = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
        }
    }
    if c.pos != bytes.len() {
        return c.fail("trailing bytes after last tensor");
    }
    ModelSnapshot::new(epoch, Model { config, params })
}

pub fn save(snapshot: &ModelSnapshot, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(snapshot)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelSnapshot> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}
