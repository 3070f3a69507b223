//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "THRM"            4 bytes magic
//! version           u32
//! entry count       u32
//! per entry:
//!   name length     u32, followed by the UTF-8 name
//!   rank            u32
//!   extents         rank x u64
//!   dtype code      u8   (0 = f32, 1 = f64)
//!   values          numel x little-endian element
//! crc32             u32 over every preceding byte
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{ParamSet, Tensor};
use crate::scalar::{DType, Real};

pub const MAGIC: &[u8; 4] = b"THRM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("unknown dtype code {0}")]
    UnknownDType(u8),
    #[error("entry name is not valid UTF-8")]
    BadName,
    #[error("duplicate entry {0}")]
    DuplicateEntry(String),
    #[error("missing entry {0}")]
    MissingEntry(String),
    #[error("entry {name}: {detail}")]
    BadEntry { name: String, detail: String },
}

/// Raw element storage of one entry.
#[derive(Debug, Clone, PartialEq)]
pub enum EntryData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl EntryData {
    fn dtype(&self) -> DType {
        match self {
            EntryData::F32(_) => DType::F32,
            EntryData::F64(_) => DType::F64,
        }
    }

    fn len(&self) -> usize {
        match self {
            EntryData::F32(v) => v.len(),
            EntryData::F64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: EntryData,
}

impl Entry {
    pub fn from_tensor<T: Real>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => EntryData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => EntryData::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let values: Vec<T> = match &self.data {
            EntryData::F32(v) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            EntryData::F64(v) => v.iter().map(|&x| T::lit(x)).collect(),
        };
        Tensor::new(self.shape.clone(), values).expect("validated on read")
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn push(&mut self, entry: Entry) -> Result<(), CheckpointError> {
        if self.get(&entry.name).is_some() {
            return Err(CheckpointError::DuplicateEntry(entry.name));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn push_tensor<T: Real>(&mut self, name: &str, t: &Tensor<T>) -> Result<(), CheckpointError> {
        self.push(Entry::from_tensor(name, t))
    }

    /// Stores a metadata value as a rank-0 f32 tensor.
    pub fn push_scalar(&mut self, name: &str, value: f64) -> Result<(), CheckpointError> {
        self.push(Entry {
            name: name.to_string(),
            shape: Vec::new(),
            data: EntryData::F32(vec![value as f32]),
        })
    }

    pub fn push_params<T: Real>(&mut self, params: &ParamSet<T>) -> Result<(), CheckpointError> {
        for (name, t) in params.iter() {
            self.push_tensor(name, t)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>, CheckpointError> {
        self.get(name)
            .map(Entry::to_tensor)
            .ok_or_else(|| CheckpointError::MissingEntry(name.to_string()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64, CheckpointError> {
        let e = self
            .get(name)
            .ok_or_else(|| CheckpointError::MissingEntry(name.to_string()))?;
        match &e.data {
            EntryData::F32(v) if v.len() == 1 => Ok(v[0] as f64),
            EntryData::F64(v) if v.len() == 1 => Ok(v[0]),
            _ => Err(CheckpointError::BadEntry {
                name: name.to_string(),
                detail: "expected a single value".into(),
            }),
        }
    }

    /// Reads a parameter set whose names and shapes must match `template`.
    pub fn load_params<T: Real>(&self, template: &ParamSet<T>) -> Result<ParamSet<T>, CheckpointError> {
        let mut out = ParamSet::new();
        for (name, t) in template.iter() {
            let loaded: Tensor<T> = self.tensor(name)?;
            if loaded.shape() != t.shape() {
                return Err(CheckpointError::BadEntry {
                    name: name.to_string(),
                    detail: format!("shape {:?}, expected {:?}", loaded.shape(), t.shape()),
                });
            }
            out.insert(name, loaded);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(e.name.as_bytes());
            buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            buf.push(e.data.dtype().code());
            match &e.data {
                EntryData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
                EntryData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 16 {
            return Err(CheckpointError::Truncated(bytes.len()));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::CrcMismatch { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let count = r.u32()? as usize;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::BadName)?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let numel: usize = shape.iter().product();
            let code = r.take(1)?[0];
            let data = match DType::from_code(code) {
                Some(DType::F32) => EntryData::F32(
                    r.take(numel * 4)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                Some(DType::F64) => EntryData::F64(
                    r.take(numel * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                None => return Err(CheckpointError::UnknownDType(code)),
            };
            debug_assert_eq!(data.len(), numel);
            ckpt.push(Entry { name, shape, data })?;
        }
        if r.pos != body.len() {
            return Err(CheckpointError::BadEntry {
                name: "<trailer>".into(),
                detail: format!("{} unexpected bytes before checksum", body.len() - r.pos),
            });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push_tensor("w", &Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 * 0.25)).unwrap();
        c.push_tensor("b", &Tensor::<f64>::from_fn(&[3], |i| -(i as f64))).unwrap();
        c.push_scalar("embedding_dim", 128.0).unwrap();
        c
    }

    #[test]
    fn byte_layout_header() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"THRM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        // first entry name
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(bytes[16], b'w');
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&bytes[..bytes.len() - 4]));
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let bytes = sample().to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.scalar("embedding_dim").unwrap(), 128.0);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        bytes[20] ^= 0xff;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::CrcMismatch { .. })));
        assert!(matches!(Checkpoint::from_bytes(b"NOPE1234"), Err(CheckpointError::BadMagic)));
        let good = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&good[..good.len() - 9]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut c = sample();
        assert!(matches!(c.push_scalar("w", 1.0), Err(CheckpointError::DuplicateEntry(_))));
    }
}
