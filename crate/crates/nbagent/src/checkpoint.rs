//! Versioned binary container of named f64 tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "NBAGCKPT"
//! version  u32
//! meta     u64 length, then UTF-8 JSON
//! count    u64
//! entry    u32 name length, name, u32 rank, rank x u64 extents, f64 payload
//! digest   32 bytes SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nbagent_core::numerics::Tensor;
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"NBAGCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint is truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint digest does not match its contents")]
    Integrity,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("duplicate entry '{0}'")]
    DuplicateEntry(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: String,
    pub entries: BTreeMap<String, Tensor>,
}

pub fn encode(meta: &str, entries: &[(String, Tensor)]) -> Result<Vec<u8>, CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(meta.as_bytes());
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    let mut seen = std::collections::BTreeSet::new();
    for (name, t) in entries {
        if !seen.insert(name.as_str()) {
            return Err(CheckpointError::DuplicateEntry(name.clone()));
        }
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(self.pos))?;
        if end > self.bytes.len() {
            return Err(CheckpointError::Truncated(self.bytes.len()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Truncated(self.pos))
    }
}

/// Structure is parsed first so that a short file reports truncation; the
/// digest is checked before any value is trusted.
pub fn decode(bytes: &[u8]) -> Result<Container, CheckpointError> {
    if bytes.len() < MAGIC.len() {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let meta_len = r.len()?;
    let meta = r.take(meta_len)?;
    let count = r.len()?;
    let mut raw = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.take(name_len)?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = r.len()?;
            numel = numel.checked_mul(d).ok_or(CheckpointError::Truncated(r.pos))?;
            shape.push(d);
        }
        let payload = r.take(numel.checked_mul(8).ok_or(CheckpointError::Truncated(r.pos))?)?;
        raw.push((name, shape, payload));
    }
    let body_end = r.pos;
    let digest = r.take(DIGEST_LEN)?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(CheckpointError::Integrity);
    }
    let meta = String::from_utf8(meta.to_vec()).map_err(|_| CheckpointError::Malformed("meta is not UTF-8".into()))?;
    let mut entries = BTreeMap::new();
    for (name, shape, payload) in raw {
        let name = String::from_utf8(name.to_vec())
            .map_err(|_| CheckpointError::Malformed("entry name is not UTF-8".into()))?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        if entries.insert(name.clone(), t).is_some() {
            return Err(CheckpointError::DuplicateEntry(name));
        }
    }
    Ok(Container { meta, entries })
}

/// Writes to a sibling temporary file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| CheckpointError::Malformed(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn save(path: &Path, meta: &str, entries: &[(String, Tensor)]) -> Result<(), CheckpointError> {
    write_atomic(path, &encode(meta, entries)?)
}

pub fn load(path: &Path) -> Result<Container, CheckpointError> {
    decode(&fs::read(path)?)
}
