//! `BSEG` checkpoint files.
//!
//! Layout (little-endian): magic `BSEG`, `u32` format version, then one record
//! per parameter until end of file: `u32` name length, UTF-8 name, four `u32`
//! dims `(n, c, h, w)`, and `n*c*h*w` raw `f32` values.

use std::path::Path;

use super::layers::Param;
use super::{Real, Shape4, Tensor4};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BSEG";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Shape4,
    pub data: Vec<f32>,
}

impl Record {
    pub fn from_param<T: Real>(p: &Param<T>) -> Self {
        Self {
            name: p.name.clone(),
            shape: p.tensor.shape(),
            data: p.tensor.data().iter().map(|v| v.as_f64() as f32).collect(),
        }
    }
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let payload: usize = records.iter().map(|r| 20 + r.name.len() + 4 * r.data.len()).sum();
    let mut out = Vec::with_capacity(8 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        for d in r.shape.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::TruncatedData {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { expected: "BSEG" });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::MalformedHeader(format!("unsupported checkpoint version {version}")));
    }
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::MalformedHeader("parameter name is not UTF-8".into()))?
            .to_owned();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3]);
        let raw = r.take(shape.len().checked_mul(4).ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

pub fn write(path: &Path, records: &[Record]) -> Result<()> {
    std::fs::write(path, encode(records)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<Record>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Copies records into parameters, matching by position, name and shape.
pub fn load_into<T: Real>(records: &[Record], params: &mut [&mut Param<T>]) -> Result<()> {
    if records.len() != params.len() {
        return Err(Error::shape(format!(
            "checkpoint has {} parameters, model has {}",
            records.len(),
            params.len()
        )));
    }
    for (rec, p) in records.iter().zip(params.iter_mut()) {
        if rec.name != p.name || rec.shape != p.tensor.shape() {
            return Err(Error::shape(format!(
                "checkpoint record {} {} does not match parameter {} {}",
                rec.name,
                rec.shape,
                p.name,
                p.tensor.shape()
            )));
        }
        let values = rec.data.iter().map(|&v| T::lit(v as f64)).collect();
        p.tensor = Tensor4::from_vec(rec.shape, values)?.with_grad();
    }
    Ok(())
}
