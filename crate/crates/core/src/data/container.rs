//! SFMC motion container.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SFMC"
//!      4     4  version (u32 LE) = 1
//!      8     4  T (u32 LE)
//!     12     4  d (u32 LE)
//!     16     4  fps (f32 LE)
//!     20     4  schema id (u32 LE)
//!     24  4*T*d frames, f32 LE, row-major
//! ```
//!
//! Optional metadata lives in a JSON sidecar next to the container.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MotionSequence, SchemaId, SynthEvent};
use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const CONTAINER_MAGIC: &[u8; 4] = b"SFMC";
pub const CONTAINER_VERSION: u32 = 1;
pub const CONTAINER_HEADER_LEN: usize = 24;

pub fn encode_container(seq: &MotionSequence) -> Result<Vec<u8>> {
    seq.validate()?;
    let (t, d) = seq.frames.shape();
    let mut out = Vec::with_capacity(CONTAINER_HEADER_LEN + 4 * t * d);
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(seq.fps as f32).to_le_bytes());
    out.extend_from_slice(&seq.schema.code().to_le_bytes());
    for &v in seq.frames.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn decode_container(bytes: &[u8]) -> Result<MotionSequence> {
    if bytes.len() < 4 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(Error::parse(0, "bad magic, expected \"SFMC\""));
    }
    if bytes.len() < CONTAINER_HEADER_LEN {
        return Err(Error::parse(
            bytes.len() as u64,
            format!(
                "truncated header: expected {CONTAINER_HEADER_LEN} bytes, got {}",
                bytes.len()
            ),
        ));
    }
    let version = u32_at(bytes, 4);
    if version != CONTAINER_VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let t = u32_at(bytes, 8) as usize;
    let d = u32_at(bytes, 12) as usize;
    let fps = f32::from_le_bytes(bytes[16..20].try_into().unwrap()) as f64;
    let schema = SchemaId::from_code(u32_at(bytes, 20))
        .ok_or_else(|| Error::parse(20, format!("unknown schema id {}", u32_at(bytes, 20))))?;
    let expected = CONTAINER_HEADER_LEN + 4 * t * d;
    if bytes.len() != expected {
        return Err(Error::parse(
            bytes.len().min(expected) as u64,
            format!(
                "payload length mismatch: expected {expected} bytes total, got {}",
                bytes.len()
            ),
        ));
    }
    let data = bytes[CONTAINER_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    MotionSequence::new(Mat::from_vec(t, d, data), fps, schema)
}

/// Validates before touching the filesystem; an invalid sequence creates no file.
pub fn write_container(seq: &MotionSequence, path: &Path) -> Result<()> {
    let bytes = encode_container(seq)?;
    fs::write(path, bytes).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_container(path: &Path) -> Result<MotionSequence> {
    decode_container(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub fps: f64,
    pub schema: SchemaId,
    #[serde(default)]
    pub events: Vec<SynthEvent>,
}

/// `foo.sfmc` → `foo.sfmc.json`
pub fn sidecar_path(container: &Path) -> PathBuf {
    let mut s = container.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar(container: &Path, sidecar: &Sidecar) -> Result<()> {
    let path = sidecar_path(container);
    let text = serde_json::to_string_pretty(sidecar)?;
    fs::write(&path, text).map_err(|source| Error::Write { path, source })
}

pub fn read_sidecar(container: &Path) -> Result<Sidecar> {
    Ok(serde_json::from_str(&fs::read_to_string(sidecar_path(container))?)?)
}
