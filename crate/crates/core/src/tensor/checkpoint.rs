//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "TRNTCKPT"
//! version    u32       currently 1
//! meta_len   u32       length of the UTF-8 metadata block
//! meta       bytes     free-form UTF-8 (JSON by convention, may be empty)
//! count      u32       number of records
//! record*    name_len u32, name bytes (UTF-8),
//!            ndim u32, dims u64 × ndim,
//!            data f64 × product(dims)
//! digest     32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Nothing may follow the digest.

use std::collections::HashSet;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Parameter, Tensor};

pub const MAGIC: &[u8; 8] = b"TRNTCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: needed {needed} bytes for {what} at offset {offset}, {available} available")]
    Truncated {
        what: String,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid UTF-8 in {what} at offset {offset}")]
    InvalidUtf8 { what: String, offset: usize },
    #[error("record {name:?} declares an element count that overflows")]
    ShapeOverflow { name: String },
    #[error("duplicate record name {0:?}")]
    DuplicateName(String),
    #[error("{0} trailing bytes after the digest")]
    TrailingBytes(usize),
    #[error("checksum mismatch: the file is corrupt")]
    ChecksumMismatch,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub records: Vec<Parameter>,
}

impl Checkpoint {
    pub fn new(metadata: impl Into<String>, records: Vec<Parameter>) -> Self {
        Self {
            metadata: metadata.into(),
            records,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.value)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.value.rank() as u32).to_le_bytes());
            for &d in r.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in r.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let metadata = r.string(meta_len, "metadata")?;
        let count = r.u32("record count")?;
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for i in 0..count {
            let name_len = r.u32(&format!("record {i} name length"))? as usize;
            let name = r.string(name_len, &format!("record {i} name"))?;
            let ndim = r.u32(&format!("{name:?} rank"))? as usize;
            // Validate that the dims fit before allocating for them.
            r.ensure(ndim.saturating_mul(8), &format!("{name:?} dims"))?;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64(&format!("{name:?} dims"))? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::ShapeOverflow { name: name.clone() })?;
            let nbytes = numel
                .checked_mul(8)
                .ok_or_else(|| CheckpointError::ShapeOverflow { name: name.clone() })?;
            let raw = r.take(nbytes, &format!("{name:?} data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::DuplicateName(name));
            }
            let value = Tensor::new(shape, data).expect("element count checked");
            records.push(Parameter { name, value });
        }
        let body_len = r.pos;
        let digest = r.take(DIGEST_LEN, "digest")?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        if Sha256::digest(&bytes[..body_len]).as_slice() != digest {
            return Err(CheckpointError::ChecksumMismatch);
        }
        Ok(Self { metadata, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn ensure(&self, n: usize, what: &str) -> Result<(), CheckpointError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(CheckpointError::Truncated {
                what: what.to_string(),
                offset: self.pos,
                needed: n,
                available,
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        self.ensure(n, what)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize, what: &str) -> Result<String, CheckpointError> {
        let offset = self.pos;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::InvalidUtf8 {
            what: what.to_string(),
            offset,
        })
    }
}
