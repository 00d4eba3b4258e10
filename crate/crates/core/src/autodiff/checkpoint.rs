//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "LRCKPT01"
//! header_len   u32       length of the UTF-8 header that follows
//! header       bytes     free-form text (the model layer stores its spec as JSON)
//! n_params     u32
//! per parameter, in declaration order:
//!   name_len   u32
//!   name       bytes     UTF-8
//!   rank       u32
//!   dims       u64 × rank
//!   values     f64 × product(dims), IEEE-754 bit patterns
//! ```
//!
//! Values are written as raw bit patterns, so a load reproduces them exactly.

use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LRCKPT01";

const MAX_RANK: usize = 8;

/// Named parameter tensor as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.header.len());
        out.extend_from_slice(self.header.as_bytes());
        put_u32(&mut out, self.params.len());
        for p in &self.params {
            put_u32(&mut out, p.name.len());
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.tensor.rank());
            for &d in p.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint. Never panics on malformed input.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let header_len = r.u32()? as usize;
        let header = r.string(header_len)?;
        let n_params = r.u32()? as usize;
        let mut params = Vec::new();
        for i in 0..n_params {
            let name_len = r.u32()? as usize;
            let name = r.string(name_len)?;
            let rank = r.u32()? as usize;
            if rank == 0 || rank > MAX_RANK {
                return Err(Error::Checkpoint(format!("parameter {i}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut count: usize = 1;
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| Error::Checkpoint(format!("parameter {i}: dimension overflow")))?;
                count = count
                    .checked_mul(d)
                    .ok_or_else(|| Error::Checkpoint(format!("parameter {i}: size overflow")))?;
                shape.push(d);
            }
            let byte_len = count
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint(format!("parameter {i}: size overflow")))?;
            let raw = r.take(byte_len)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            let tensor = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("parameter {i} ({name}): {e}")))?;
            params.push(NamedTensor { name, tensor });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
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

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            header: "{\"kind\":\"DNN\"}".into(),
            params: vec![
                NamedTensor {
                    name: "w".into(),
                    tensor: Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
                },
                NamedTensor {
                    name: "b".into(),
                    tensor: Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap(),
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.header, ck.header);
        for (a, b) in back.params.iter().zip(&ck.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.shape(), b.tensor.shape());
            let bits_a: Vec<u64> = a.tensor.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.tensor.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn truncation_and_garbage_are_errors() {
        let bytes = sample().to_bytes();
        for cut in [0, 4, 8, 12, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert!(Checkpoint::from_bytes(b"LRCKPT01\xff\xff\xff\xff").is_err());
    }

    #[test]
    fn huge_dimensions_do_not_allocate() {
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&0u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.push(b'w');
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&u64::MAX.to_le_bytes());
        b.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(Checkpoint::from_bytes(&b).is_err());
    }
}
