//! Checkpoint container: named f32 tensors plus a JSON metadata block.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SIAMOSHT"
//! version  u32      1
//! kind     u32 length + UTF-8 ("tracker", "generator", "bank", ...)
//! meta     u64 length + UTF-8 JSON
//! count    u32
//! tensor*  u32 name length + UTF-8 name
//!          u32 rank, rank x u64 dims
//!          prod(dims) x f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::Param;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SIAMOSHT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<Param>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value, tensors: Vec<Param>) -> Self {
        Self {
            kind: kind.into(),
            meta,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_str32(&mut out, &self.kind);
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            write_str32(&mut out, &t.name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = read_str32(&mut r)?;
        let meta_len = read_u64(&mut r)? as usize;
        if meta_len > r.len() {
            return Err(Error::Checkpoint("truncated metadata".into()));
        }
        let meta = serde_json::from_slice(&r[..meta_len])?;
        r = &r[meta_len..];
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_str32(&mut r)?;
            let rank = read_u32(&mut r)? as usize;
            let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if n * 4 > r.len() {
                return Err(Error::Checkpoint(format!("truncated tensor {name}")));
            }
            let value = r[..n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            r = &r[n * 4..];
            tensors.push(Param {
                name,
                shape,
                value,
                grad: Vec::new(),
            });
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { kind, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(self, kind: &str) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(self)
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn write_str32(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Checkpoint("unexpected end of data".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str32(r: &mut &[u8]) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > r.len() {
        return Err(Error::Checkpoint("truncated string".into()));
    }
    let s = std::str::from_utf8(&r[..n]).map_err(|e| Error::Checkpoint(e.to_string()))?.to_owned();
    *r = &r[n..];
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let mut a = Param::zeros("layer.weight", &[2, 3]);
        a.value = vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, 7.0];
        let ck = Checkpoint::new("tracker", serde_json::json!({"channels": [24, 32]}), vec![a]);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.kind, "tracker");
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.tensors[0].value, ck.tensors[0].value);
        assert_eq!(back.sha256(), ck.sha256());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(back.expect_kind("generator").is_err());
    }
}
