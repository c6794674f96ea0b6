//! Little-endian tensor container.
//!
//! ```text
//! magic   "S2C1"              4 bytes
//! version u32                 currently 1
//! count   u32
//! entry*: name_len u16, name (UTF-8), rank u8, extents u32[rank],
//!         dtype u8 (0 = f32), payload (product(extents) * 4 bytes)
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::numkit::Tensor;

pub const CONTAINER_MAGIC: &[u8; 4] = b"S2C1";
pub const CONTAINER_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"S2C1\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported container version {found} (expected {CONTAINER_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("length mismatch: {what} needs {needed} bytes at offset {offset}, {available} available")]
    LengthMismatch {
        what: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("entry name is not valid UTF-8")]
    InvalidName,
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("invalid entry {name:?}: {reason}")]
    InvalidEntry { name: String, reason: String },
}

pub fn encode_container<'a, I>(entries: I) -> Result<Vec<u8>, ContainerError>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let entries: Vec<_> = entries.into_iter().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        if !seen.insert(name) {
            return Err(ContainerError::DuplicateName(name.to_string()));
        }
        let invalid = |reason: &str| ContainerError::InvalidEntry {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        let name_len = u16::try_from(name.len()).map_err(|_| invalid("name longer than 65535 bytes"))?;
        let rank = u8::try_from(t.rank()).map_err(|_| invalid("rank above 255"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| invalid("extent above u32::MAX"))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        out.push(DTYPE_F32);
        for &v in t.data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(invalid("value not representable as finite f32"));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ContainerError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(ContainerError::LengthMismatch { what, offset: self.pos, needed: n, available });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, ContainerError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic").map_err(|_| ContainerError::BadMagic { found: bytes.to_vec() })?;
    if magic != CONTAINER_MAGIC {
        return Err(ContainerError::BadMagic { found: magic.to_vec() });
    }
    let version = r.u32("version")?;
    if version != CONTAINER_VERSION {
        return Err(ContainerError::VersionMismatch { found: version });
    }
    let count = r.u32("entry count")?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| ContainerError::InvalidName)?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(ContainerError::DuplicateName(name));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let e = r.u32("extent")? as usize;
            shape.push(e);
            numel = numel.checked_mul(e).ok_or_else(|| ContainerError::InvalidEntry {
                name: name.clone(),
                reason: "element count overflows".into(),
            })?;
        }
        if rank == 0 || shape.contains(&0) {
            return Err(ContainerError::InvalidEntry { name, reason: "rank and extents must be positive".into() });
        }
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(ContainerError::UnknownDtype(dtype));
        }
        let nbytes = numel.checked_mul(4).ok_or_else(|| ContainerError::InvalidEntry {
            name: name.clone(),
            reason: "payload size overflows".into(),
        })?;
        let payload = r.take(nbytes, "payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ContainerError::InvalidEntry { name, reason: "non-finite payload value".into() });
        }
        out.push((name, Tensor::new(shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(ContainerError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(out)
}

/// Encode and write, syncing to disk before returning.
pub fn write_container<'a, I>(path: &Path, entries: I) -> Result<(), ContainerError>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let bytes = encode_container(entries)?;
    let io = |source| ContainerError::Io { path: path.display().to_string(), source };
    let mut f = File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Vec<(String, Tensor)>, ContainerError> {
    let bytes = std::fs::read(path).map_err(|source| ContainerError::Io { path: path.display().to_string(), source })?;
    decode_container(&bytes)
}
