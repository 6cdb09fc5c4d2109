//! `NAQM` model checkpoints.
//!
//! Layout (little-endian): `b"NAQM"`, `u32` version, `u32` tensor count,
//! then per tensor: `u32` name length, UTF-8 name, `u32` rank, `rank`
//! `u64` dims, and the `f64` values in row-major order.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::localizer::ModelParams;

pub const MODEL_MAGIC: &[u8; 4] = b"NAQM";
pub const VERSION: u32 = 1;

fn shapes(p: &ModelParams) -> [Vec<u64>; 5] {
    let (v, d) = (p.vocab() as u64, p.dim() as u64);
    [vec![v, d], vec![d, 3 * d], vec![d], vec![d], vec![d]]
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut sink: W) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * params.len());
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let tensors = params.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for ((name, values), shape) in tensors.iter().zip(shapes(params)) {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for dim in &shape {
            buf.extend_from_slice(&dim.to_le_bytes());
        }
        for v in values.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut source: R) -> Result<ModelParams> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4)? != MODEL_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut named: Vec<(String, Vec<u64>, Vec<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let shape = (0..rank).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflow".into()))? as usize;
        let raw = cur.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor size overflow".into()))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        named.push((name, shape, values));
    }
    if cur.pos != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let mut take = |want: &str| -> Result<(Vec<u64>, Vec<f64>)> {
        let i = named
            .iter()
            .position(|(n, _, _)| n == want)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {want}")))?;
        let (_, shape, values) = named.swap_remove(i);
        Ok((shape, values))
    };
    let (embed_shape, embed) = take("embed")?;
    if embed_shape.len() != 2 {
        return Err(Error::Format("embed must be rank 2".into()));
    }
    let (vocab, dim) = (embed_shape[0] as usize, embed_shape[1] as usize);
    let (_, fusion) = take("fusion")?;
    let (_, bias) = take("bias")?;
    let (_, start) = take("start")?;
    let (_, end) = take("end")?;
    ModelParams::from_parts(vocab, dim, embed, fusion, bias, start, end)
}
