//! Named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "TKITCKPT"
//! version  u32
//! count    u32
//! entries  count x { name_len u32, name utf-8, dtype u8, rank u32,
//!                    dims rank x u64, values (f32|f64 LE) }
//! crc32    u32      over every preceding byte
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::float::{DType, Float};
use crate::tensor::{Tensor, MAX_DIMS};

pub const MAGIC: &[u8; 8] = b"TKITCKPT";
pub const VERSION: u32 = 1;

/// Serialize tensors in the given order.
pub fn encode<F: Float>(entries: &[(String, Tensor<F>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(F::DTYPE.tag());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(TensorError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse a container, converting stored values to `F` when the dtypes differ.
pub fn decode<F: Float>(bytes: &[u8]) -> Result<Vec<(String, Tensor<F>)>> {
    if bytes.len() < MAGIC.len() + 12 {
        return Err(TensorError::Checkpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(TensorError::Checkpoint("crc mismatch".into()));
    }
    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| TensorError::Checkpoint(format!("tensor name: {e}")))?
            .to_string();
        let dtype = DType::from_tag(cur.take(1)?[0])
            .ok_or_else(|| TensorError::Checkpoint(format!("{name}: unknown dtype")))?;
        let rank = cur.u32()? as usize;
        if rank > MAX_DIMS {
            return Err(TensorError::Checkpoint(format!("{name}: rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let raw = cur.take(n * dtype.width())?;
        let data: Vec<F> = match dtype {
            DType::F32 => raw.chunks(4).map(|c| F::from_f64_lossy(f32::read_le(c) as f64)).collect(),
            DType::F64 => raw.chunks(8).map(|c| F::from_f64_lossy(f64::read_le(c))).collect(),
        };
        entries.push((name, Tensor::new(&shape, data)?));
    }
    if cur.pos != body.len() {
        return Err(TensorError::Checkpoint("trailing bytes".into()));
    }
    Ok(entries)
}

pub fn save<F: Float>(path: &Path, entries: &[(String, Tensor<F>)]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode(entries))?;
    Ok(())
}

pub fn load<F: Float>(path: &Path) -> Result<Vec<(String, Tensor<F>)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor<f32>)> {
        vec![
            ("a.w".to_string(), Tensor::new(&[2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap()),
            ("b".to_string(), Tensor::scalar(7.0)),
        ]
    }

    #[test]
    fn roundtrip_preserves_names_and_values() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..8], MAGIC);
        let back: Vec<(String, Tensor<f32>)> = decode(&bytes).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&sample());
        bytes[20] ^= 0xff;
        assert!(matches!(decode::<f32>(&bytes), Err(TensorError::Checkpoint(_))));
    }

    #[test]
    fn widening_on_load() {
        let back: Vec<(String, Tensor<f64>)> = decode(&encode(&sample())).unwrap();
        assert_eq!(back[0].1.data(), &[1.0, -2.0, 3.5, 0.25]);
    }
}
