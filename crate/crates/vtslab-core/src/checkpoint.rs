//! Flat key→tensor checkpoint container.
//!
//! Format (all integers little-endian):
//!
//! ```text
//! magic   8 bytes   b"VTSCKPT1"
//! count   u32       number of entries
//! entry   repeated  key_len: u32, key: UTF-8 bytes,
//!                   ndim: u32, dims: ndim x u64,
//!                   data: prod(dims) x f64 (IEEE-754 bits)
//! ```
//!
//! Values are stored as raw `f64` bit patterns, so save/load round-trips are
//! lossless at double precision. Entry order is preserved and keys must be
//! unique.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"VTSCKPT1";

/// Ordered collection of named tensors with file save/load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    /// Add an entry. Errors on duplicate keys.
    pub fn insert(&mut self, key: impl Into<String>, value: Tensor) -> Result<()> {
        let key = key.into();
        if self.entries.iter().any(|(k, _)| *k == key) {
            return Err(Error::usage(format!("duplicate checkpoint key {key:?}")));
        }
        self.entries.push((key, value));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, t)| t)
    }

    /// Like [`Checkpoint::get`] but errors with the missing key's name.
    pub fn require(&self, key: &str) -> Result<&Tensor> {
        self.get(key)
            .ok_or_else(|| Error::usage(format!("checkpoint is missing key {key:?}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serialize to bytes in the documented container format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (key, tensor) in &self.entries {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parse bytes produced by [`Checkpoint::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Malformed {
                what: "checkpoint".into(),
                msg: "bad magic (not a checkpoint file)".into(),
            });
        }
        let count = r.u32()? as usize;
        let mut ckpt = Checkpoint::new();
        for i in 0..count {
            let key_len = r.u32()? as usize;
            let key_bytes = r.take(key_len)?;
            let key = std::str::from_utf8(key_bytes)
                .map_err(|_| Error::Malformed {
                    what: "checkpoint".into(),
                    msg: format!("entry {i}: key is not UTF-8"),
                })?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            let tensor = Tensor::new(&shape, data).map_err(|e| Error::Malformed {
                what: "checkpoint".into(),
                msg: format!("entry {i} ({key:?}): {e}"),
            })?;
            ckpt.insert(key, tensor)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed {
                what: "checkpoint".into(),
                msg: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(ckpt)
    }

    /// Write to a file, creating parent directories as needed.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Read from a file. A missing file is reported as [`Error::MissingFile`]
    /// with the path.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Malformed {
                what: "checkpoint".into(),
                msg: format!(
                    "truncated: wanted {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
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
