//! Flat, versioned tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "CSECKPT\0"
//! version  u32      FORMAT_VERSION
//! tag_len  u32, tag bytes (UTF-8)
//! count    u32
//! count × { name_len u32, name bytes, rank u32, dims u64 × rank, values f64 × Π dims }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{KernelError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CSECKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Ordered `(name, tensor)` records plus a free-form tag (schema version,
/// model hash, ...).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub tag: String,
    pub records: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            records: Vec::new(),
        }
    }

    pub fn from_params(tag: impl Into<String>, params: &ParamSet) -> Self {
        Self {
            tag: tag.into(),
            records: params.records(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.records.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.tag)?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for (name, t) in &self.records {
            write_str(&mut w, name)?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(KernelError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(KernelError::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let tag = read_str(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Tensor::new(shape, data).map_err(|e| KernelError::Checkpoint(format!("record `{name}`: {e}")))?;
            records.push((name, t));
        }
        Ok(Self { tag, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| KernelError::Checkpoint("record name is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_in_memory() {
        let mut c = Container::new("params:abc");
        c.push("a.weight", Tensor::new(vec![2, 3], vec![1.5, -2.0, 0.0, 1e-300, 7.0, -0.25]).unwrap());
        c.push("a.bias", Tensor::vector(vec![f64::MIN_POSITIVE]));
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(Container::read_from(&buf[..]).unwrap(), c);
    }

    #[test]
    fn rejects_wrong_version_and_magic() {
        let mut buf = Vec::new();
        Container::new("x").write_to(&mut buf).unwrap();
        buf[8] = 9;
        assert!(Container::read_from(&buf[..]).unwrap_err().to_string().contains("version"));
        buf[0] = b'X';
        assert!(Container::read_from(&buf[..]).is_err());
    }
}
