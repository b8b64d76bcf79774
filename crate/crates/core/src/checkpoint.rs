//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"SSGCKPT\0"
//! version      u32       currently 1
//! config       str       ModelConfig::canonical()
//! fingerprint  str       ModelConfig::fingerprint() at save time
//! epoch        u64
//! metrics      u32 count, then (str name, f64 value) pairs
//! tensors      u32 count, then (str name, u32 rows, u32 cols, rows·cols f64) in Model::param_specs order
//! ```
//!
//! A `str` is a `u32` byte length followed by UTF-8 bytes. Nothing may
//! follow the last tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8; 8] = b"SSGCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: usize,
    /// Validation metrics at `epoch`, e.g. `valid_ic`.
    pub metrics: BTreeMap<String, f64>,
}

impl Checkpoint {
    pub fn fingerprint(&self) -> String {
        self.model.config.fingerprint()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.model.config.canonical());
        put_str(&mut out, &self.fingerprint());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&(self.metrics.len() as u32).to_le_bytes());
        for (k, v) in &self.metrics {
            put_str(&mut out, k);
            out.extend_from_slice(&v.to_le_bytes());
        }
        let tensors = self.model.named_tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(r.corrupt("bad magic bytes"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let config = ModelConfig::from_canonical(&r.string()?)?;
        let stored = r.string()?;
        if stored != config.fingerprint() {
            return Err(Error::FingerprintMismatch {
                checkpoint: stored,
                config: config.fingerprint(),
            });
        }
        let epoch = r.u64()? as usize;
        let mut metrics = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            metrics.insert(k, r.f64()?);
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| r.corrupt("tensor larger than file"))?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Array2::from_shape_vec((rows, cols), data).expect("length checked");
            tensors.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(r.corrupt("trailing bytes"));
        }
        let model = Model::from_named_tensors(config, tensors).map_err(|e| r.corrupt(&e.to_string()))?;
        Ok(Self { model, epoch, metrics })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::from_bytes(&fs::read(path)?, path)
}

/// Loads a checkpoint and checks it was trained with `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.fingerprint() != expected.fingerprint() {
        return Err(Error::FingerprintMismatch {
            checkpoint: ckpt.fingerprint(),
            config: expected.fingerprint(),
        });
    }
    Ok(ckpt)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, message: &str) -> Error {
        Error::CorruptCheckpoint {
            path: PathBuf::from(self.path),
            message: format!("{message} (offset {})", self.pos),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.corrupt("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.corrupt("invalid UTF-8"))
    }
}
