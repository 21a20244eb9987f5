//! Versioned binary parameter files.
//!
//! Layout (all integers little-endian):
//!
//! | field        | type                         |
//! |--------------|------------------------------|
//! | magic        | 8 bytes `ARRGCKPT`           |
//! | version      | u32 (currently 1)            |
//! | dtype        | u8 (0 = f32, 1 = f64)        |
//! | config_len   | u32                          |
//! | config       | UTF-8 `key=value` lines      |
//! | n_records    | u32                          |
//! | records      | see below, `n_records` times |
//!
//! Each record is `name_len: u16`, the UTF-8 name, `rank: u8`, `rank` dims as
//! u32, then `product(dims)` raw values.

use std::io::{Read, Write};

use super::scalar::Scalar;
use super::AutogradError;

pub const MAGIC: &[u8; 8] = b"ARRGCKPT";
pub const VERSION: u32 = 1;

/// One named array in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Record<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: String,
    pub records: Vec<Record<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::DTYPE_TAG);
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.shape.len() as u8);
            for &d in &r.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &r.values {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AutogradError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(AutogradError::Format("bad magic bytes".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(AutogradError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let dtype = cur.take(1)?[0];
        if dtype != T::DTYPE_TAG {
            return Err(AutogradError::Format(format!(
                "checkpoint dtype tag {dtype} does not match requested precision"
            )));
        }
        let config_len = cur.u32()? as usize;
        let config = String::from_utf8(cur.take(config_len)?.to_vec())
            .map_err(|_| AutogradError::Format("config is not UTF-8".into()))?;
        let count = cur.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| AutogradError::Format("record name is not UTF-8".into()))?;
            let rank = cur.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = cur.take(n.checked_mul(T::BYTES).ok_or_else(|| {
                AutogradError::Format("record size overflow".into())
            })?)?;
            let values = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            records.push(Record { name, shape, values });
        }
        if cur.pos != bytes.len() {
            return Err(AutogradError::Format("trailing bytes after records".into()));
        }
        Ok(Self { config, records })
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, AutogradError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| AutogradError::Format(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn record(&self, name: &str) -> Option<&Record<T>> {
        self.records.iter().find(|r| r.name == name)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutogradError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| AutogradError::Format("unexpected end of checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, AutogradError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        Checkpoint {
            config: "arch=test\n".into(),
            records: vec![
                Record { name: "w".into(), shape: vec![2, 2], values: vec![1.0, -2.0, 3.5, 0.0] },
                Record { name: "b".into(), shape: vec![1], values: vec![f32::MIN_POSITIVE] },
            ],
        }
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupted_magic_and_dtype_are_rejected() {
        let mut bytes = sample().to_bytes();
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes),
            Err(AutogradError::Format(m)) if m.contains("magic")
        ));
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
