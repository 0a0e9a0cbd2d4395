//! Binary container shared by datasets and checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic | `b"CDNO"` |
//! | version | `u32` |
//! | header length | `u64` |
//! | header | UTF-8 JSON |
//! | header checksum | `u64` FNV-1a of the header bytes |
//! | buffer count | `u64` |
//! | per buffer: length, values, checksum | `u64`, `f64 × length`, `u64` FNV-1a of the value bytes |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CodanoError, Result};
use crate::hash::{fnv1a64, Fnv1a};

pub const MAGIC: &[u8; 4] = b"CDNO";
pub const VERSION: u32 = 1;

pub fn encode<H: Serialize>(header: &H, buffers: &[&[f64]]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| CodanoError::Format(e.to_string()))?;
    let total: usize = buffers.iter().map(|b| 16 + 8 * b.len()).sum();
    let mut out = Vec::with_capacity(36 + json.len() + total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&fnv1a64(&json).to_le_bytes());
    out.extend_from_slice(&(buffers.len() as u64).to_le_bytes());
    for b in buffers {
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        let mut h = Fnv1a::new();
        for v in b.iter() {
            let bytes = v.to_le_bytes();
            h.update(&bytes);
            out.extend_from_slice(&bytes);
        }
        out.extend_from_slice(&h.finish().to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CodanoError::Truncated(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        usize::try_from(n).map_err(|_| CodanoError::Format(format!("{what} {n} is too large")))
    }
}

/// Parse a container; every buffer is checksum-verified before anything is returned.
pub fn decode<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<Vec<f64>>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CodanoError::Format("missing CDNO magic bytes".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CodanoError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let hlen = r.len("header length")?;
    let json = r.take(hlen, "header")?;
    if r.u64("header checksum")? != fnv1a64(json) {
        return Err(CodanoError::Checksum("header".into()));
    }
    let header: H = serde_json::from_slice(json).map_err(|e| CodanoError::Format(format!("header: {e}")))?;
    let count = r.len("buffer count")?;
    let mut buffers = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let n = r.len("buffer length")?;
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| CodanoError::Format(format!("buffer {i} length {n} overflows")))?,
            "buffer",
        )?;
        if r.u64("buffer checksum")? != fnv1a64(raw) {
            return Err(CodanoError::Checksum(format!("buffer {i}")));
        }
        buffers.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(CodanoError::Format(format!(
            "{} trailing bytes after the last buffer",
            bytes.len() - r.pos
        )));
    }
    Ok((header, buffers))
}

/// Write through a sibling temporary file and rename, so readers never see a partial file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CodanoError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| CodanoError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CodanoError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CodanoError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CodanoError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CodanoError::io(path, e))
}
