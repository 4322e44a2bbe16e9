//! Binary parameter container: `MMOE`, format version, parameter count, then
//! per parameter its name, shape and f64 payload. Little-endian throughout.

use std::io::{Read, Write};
use std::path::Path;

use crate::diffcore::ParamRegistry;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMOE";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_checkpoint(reg: &ParamRegistry) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + reg.total_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(reg.len() as u32).to_le_bytes());
    for (name, t) in reg.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads values into an already-built registry. Every parameter must be
/// present with the same name and shape.
pub fn decode_checkpoint(bytes: &[u8], reg: &mut ParamRegistry) -> Result<()> {
    let mut c = Cursor { buf: bytes, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32()? as usize;
    if count != reg.len() {
        return Err(Error::Shape(format!(
            "checkpoint holds {count} parameters, model has {}",
            reg.len()
        )));
    }
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let id = reg
            .id_of(&name)
            .ok_or_else(|| Error::Shape(format!("checkpoint parameter {name} is not in the model")))?;
        if reg.get(id).shape != shape {
            return Err(Error::Shape(format!(
                "{name}: checkpoint shape {shape:?}, model shape {:?}",
                reg.get(id).shape
            )));
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8)?;
        let t = reg.get_mut(id);
        for (v, b) in t.data.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().unwrap());
        }
    }
    if c.at != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(())
}

pub fn write_checkpoint(path: &Path, reg: &ParamRegistry) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(reg)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path, reg: &mut ParamRegistry) -> Result<()> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, reg)
}
