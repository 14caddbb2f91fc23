//! Shared pieces of the little-endian binary containers.

use std::io::{self, Write};
use std::path::Path;

use condadapt_core::data::DataError;
use condadapt_core::network::NetworkError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("file is empty")]
    Empty,
    #[error("not a {expected} file (magic {found:?})")]
    Magic { expected: &'static str, found: Vec<u8> },
    #[error("unsupported {kind} version {found} (this build reads {supported})")]
    Version {
        kind: &'static str,
        found: u32,
        supported: u32,
    },
    #[error("file is truncated (needed {needed} more bytes at offset {offset})")]
    Truncated { offset: usize, needed: usize },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid config in header: {0}")]
    Config(#[from] serde_json::Error),
}

/// Cursor over an in-memory file. Every read is bounds-checked so corrupt
/// length fields fail as truncation instead of huge allocations.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, offset: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let rest = &self.bytes[self.offset..];
        if n > rest.len() {
            return Err(FormatError::Truncated {
                offset: self.offset,
                needed: n - rest.len(),
            });
        }
        self.offset += n;
        Ok(&rest[..n])
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn usize(&mut self) -> Result<usize, FormatError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| FormatError::Corrupt(format!("length {v} does not fit in memory")))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| FormatError::Corrupt(format!("element count {n} overflows")))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4], kind: &'static str) -> Result<(), FormatError> {
        if self.bytes.is_empty() {
            return Err(FormatError::Empty);
        }
        let n = self.bytes.len().min(4);
        if self.bytes[..n] != expected[..n] || n < 4 {
            return Err(FormatError::Magic {
                expected: kind,
                found: self.bytes[..n].to_vec(),
            });
        }
        self.offset = 4;
        Ok(())
    }

    pub(crate) fn version(&mut self, supported: u32, kind: &'static str) -> Result<(), FormatError> {
        let found = self.u32()?;
        if found != supported {
            return Err(FormatError::Version { kind, found, supported });
        }
        Ok(())
    }

    pub(crate) fn finish(self) -> Result<(), FormatError> {
        let extra = self.bytes.len() - self.offset;
        if extra != 0 {
            return Err(FormatError::Corrupt(format!("{extra} trailing bytes")));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
