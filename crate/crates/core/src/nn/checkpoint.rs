//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "HWCOSTCK" | version u32
//! config   : u64 length + UTF-8 text
//! vocab    : u64 length + UTF-8 text
//! hash     : u64 length + UTF-8 hex SHA-256 of the vocab text
//! tensors  : u64 count, then per tensor
//!            u64 name length + name | u32 rank | rank × u64 dims | values as f64
//! adam     : u8 flag; if 1, per tensor u64 step + m values + v values
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::AdamState;

pub const MAGIC: &[u8; 8] = b"HWCOSTCK";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("vocabulary hash mismatch: stored {stored}, computed {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub vocab: String,
    pub tensors: Vec<NamedTensor>,
    /// Optimizer state, one entry per tensor in the same order.
    pub adam: Option<Vec<AdamState>>,
}

pub fn text_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(self.buf.len()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    // A length prefix that must fit in what is left, at `unit` bytes each.
    fn len(&mut self, unit: usize) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        match usize::try_from(n).ok().and_then(|n| n.checked_mul(unit)) {
            Some(bytes) if bytes <= self.remaining() => Ok(n as usize),
            _ => Err(CheckpointError::Truncated(self.buf.len())),
        }
    }

    fn text(&mut self) -> Result<String, CheckpointError> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("text is not UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = n.checked_mul(8).ok_or(CheckpointError::Truncated(self.buf.len()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_bytes(&mut out, self.config.as_bytes());
        put_bytes(&mut out, self.vocab.as_bytes());
        put_bytes(&mut out, text_hash(&self.vocab).as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            put_bytes(&mut out, t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            put_f64s(&mut out, &t.values);
        }
        match &self.adam {
            None => out.push(0),
            Some(states) => {
                out.push(1);
                for s in states {
                    out.extend_from_slice(&s.t.to_le_bytes());
                    put_f64s(&mut out, &s.m);
                    put_f64s(&mut out, &s.v);
                }
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let config = r.text()?;
        let vocab = r.text()?;
        let stored = r.text()?;
        let computed = text_hash(&vocab);
        if stored != computed {
            return Err(CheckpointError::HashMismatch { stored, computed });
        }
        // every tensor needs at least a name length and a rank
        let count = r.len(12)?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.text()?;
            let rank = r.u32()? as usize;
            if rank.saturating_mul(8) > r.remaining() {
                return Err(CheckpointError::Truncated(buf.len()));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut n: usize = 1;
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?).map_err(|_| CheckpointError::Truncated(buf.len()))?;
                n = n.checked_mul(d).ok_or(CheckpointError::Truncated(buf.len()))?;
                shape.push(d);
            }
            let values = r.f64s(n)?;
            tensors.push(NamedTensor { name, shape, values });
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let mut states = Vec::with_capacity(tensors.len());
                for t in &tensors {
                    let step = r.u64()?;
                    let m = r.f64s(t.values.len())?;
                    let v = r.f64s(t.values.len())?;
                    states.push(AdamState { t: step, m, v });
                }
                Some(states)
            }
            f => return Err(CheckpointError::Malformed(format!("optimizer flag {f}"))),
        };
        if r.remaining() != 0 {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint {
            config,
            vocab,
            tensors,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        Checkpoint::decode(&std::fs::read(path)?)
    }
}
