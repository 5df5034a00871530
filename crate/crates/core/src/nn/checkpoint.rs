//! Versioned weight archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BGCK" | version u32 | config_len u32 | config (JSON) | count u32
//! per parameter: name_len u16 | name (UTF-8) | dtype u8 (0 = f32)
//!                | ndim u8 | dims u32 × ndim | data f32 × Π dims
//! ```

use std::io::{Read, Write};
use std::path::Path;

use bgop_tensor::{Float, Tensor};

use super::model::{Codec, ModelConfig};
use super::params::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BGCK";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn io_err(e: std::io::Error) -> Error {
    ck(e.to_string())
}

pub fn write_checkpoint<F: Float>(out: &mut impl Write, config: &ModelConfig, params: &ParamStore<F>) -> Result<()> {
    let config = serde_json::to_vec(config).map_err(|e| ck(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + config.len() + params.element_count() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F32);
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(io_err)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| ck("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Reads an archive and checks its parameters against the networks its
/// config describes.
pub fn read_checkpoint(input: &mut impl Read) -> Result<(ModelConfig, ParamStore<f32>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io_err)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(ck("bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(ck(format!("unsupported version {version}")));
    }
    let len = c.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(len)?).map_err(|e| ck(format!("config: {e}")))?;
    let count = c.u32()?;
    let mut params = ParamStore::default();
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| ck("parameter name is not UTF-8"))?.to_string();
        if c.u8()? != DTYPE_F32 {
            return Err(ck(format!("parameter {name} has an unknown dtype")));
        }
        let ndim = c.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| ck("parameter too large"))?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| ck(e.to_string()))?;
        if !t.all_finite() {
            return Err(ck(format!("parameter {name} is not finite")));
        }
        params.insert(name, t);
    }
    if c.pos != bytes.len() {
        return Err(ck("trailing bytes"));
    }
    params.validate(&Codec::new(config.clone())?.specs())?;
    Ok((config, params))
}

pub fn save_checkpoint<F: Float>(path: &Path, config: &ModelConfig, params: &ParamStore<F>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, config, params)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParamStore<f32>)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut file)
}
