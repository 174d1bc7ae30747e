//! Binary artifact container: magic, version, JSON manifest, f64 payload.
//!
//! Layout: 8-byte magic, `u32` version, `u64` manifest length, manifest
//! bytes (UTF-8 JSON), `u64` payload count, then little-endian doubles.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Write through a sibling temp file and rename, so readers never see a
/// partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.partial"));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub(crate) fn encode(magic: &[u8; 8], version: u32, manifest: &str, payload: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + manifest.len() + 8 * payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) struct Decoded {
    pub manifest: String,
    pub payload: Vec<f64>,
}

pub(crate) fn decode(path: &Path, bytes: &[u8], magic: &[u8; 8], version: u32) -> Result<Decoded> {
    let schema = |detail: String| Error::Schema { path: path.to_path_buf(), detail };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| schema("truncated file".into()))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(8)? != magic {
        return Err(schema(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
    }
    let found = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if found != version {
        return Err(schema(format!("version {found}, expected {version}")));
    }
    let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let manifest = std::str::from_utf8(take(len)?).map_err(|e| schema(format!("manifest is not UTF-8: {e}")))?.to_owned();
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let raw = take(count.checked_mul(8).ok_or_else(|| schema("payload length overflow".into()))?)?;
    let payload = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if pos != bytes.len() {
        return Err(schema(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(Decoded { manifest, payload })
}
