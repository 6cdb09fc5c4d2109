//! Dense per-timestep video features and the `NAQF` binary container.
//!
//! Layout: `b"NAQF"`, `u32` rows (timesteps), `u32` cols (feature dim),
//! then `rows * cols` `f32` values in row-major order. All little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"NAQF";

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for {rows}x{cols} features", data.len())));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Row-major copy widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| f64::from(x)).collect()
    }

    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<()> {
        let rows = u32::try_from(self.rows).map_err(|_| Error::Format("too many rows".into()))?;
        let cols = u32::try_from(self.cols).map_err(|_| Error::Format("too many columns".into()))?;
        let mut buf = Vec::with_capacity(12 + 4 * self.data.len());
        buf.extend_from_slice(FEATURE_MAGIC);
        buf.extend_from_slice(&rows.to_le_bytes());
        buf.extend_from_slice(&cols.to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        sink.write_all(&buf)?;
        sink.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut source: R) -> Result<Self> {
        let mut header = [0u8; 12];
        source
            .read_exact(&mut header)
            .map_err(|_| Error::Format("truncated feature header".into()))?;
        if &header[..4] != FEATURE_MAGIC {
            return Err(Error::Format("bad feature magic".into()));
        }
        let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("feature size overflow".into()))?;
        let mut body = Vec::new();
        source.read_to_end(&mut body)?;
        if body.len() != 4 * n {
            return Err(Error::Format(format!("expected {} feature bytes, found {}", 4 * n, body.len())));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(FeatureMatrix { rows, cols, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let m = FeatureMatrix::new(1, 2, vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let mut expected = b"NAQF".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, expected);
        assert_eq!(FeatureMatrix::read_from(&buf[..]).unwrap(), m);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(FeatureMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureMatrix::read_from(&b"NAQX\0\0\0\0\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        FeatureMatrix::zeros(2, 3).write_to(&mut buf).unwrap();
        buf.pop();
        assert!(FeatureMatrix::read_from(&buf[..]).is_err());
    }
}
