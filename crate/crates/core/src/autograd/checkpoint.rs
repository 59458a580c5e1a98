//! Binary parameter checkpoints.
//!
//! Layout, little-endian: the magic `FFCK`, then one record per tensor
//! until end of file: `u32` name length, UTF-8 name, `u32` rank, `rank`
//! `u32` dimensions, and the `f32` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FFCK";

pub fn write<T: Scalar, W: Write>(params: &ParamStore<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn to_bytes<T: Scalar>(params: &ParamStore<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    write(params, &mut buf).expect("writing to memory");
    buf
}

pub fn save<T: Scalar>(params: &ParamStore<T>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated in {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut c = Cursor { bytes, pos: 4 };
    let mut store = ParamStore::new();
    while c.pos < bytes.len() {
        let len = c.u32("name length")?;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))?
            .to_owned();
        let rank = c.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u32("dimensions")?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor {name} too large")))?;
        let raw = c.take(numel.saturating_mul(4), "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        store
            .insert(name, Tensor::new(&shape, data)?)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(store)
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
