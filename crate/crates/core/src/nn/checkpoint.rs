//! Checkpoint file layout (all integers little-endian `u32`):
//!
//! ```text
//! "SFCK" | version | entry count
//! per entry, sorted by name:
//!   name length | name (UTF-8) | rows | cols | rows*cols f32 LE, row-major
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(tensors: &BTreeMap<String, Mat>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for &v in m.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} available",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<BTreeMap<String, Mat>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::parse(0, format!("bad checkpoint magic {magic:?}")));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(4, format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32("entry count")?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_at = c.pos as u64;
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::parse(name_at, "tensor name is not UTF-8"))?
            .to_string();
        let rows = c.u32("rows")? as usize;
        let cols = c.u32("cols")? as usize;
        let payload = c.take(rows * cols * 4, "tensor payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        out.insert(name, Mat::from_vec(rows, cols, data));
    }
    if c.pos != bytes.len() {
        return Err(Error::parse(c.pos as u64, "trailing bytes after last entry"));
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, tensors: &BTreeMap<String, Mat>) -> Result<()> {
    fs::write(path, encode_checkpoint(tensors)).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<BTreeMap<String, Mat>> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut t = BTreeMap::new();
        t.insert("a.w".to_string(), Mat::from_vec(2, 2, vec![1.5, -0.25, 3.0e-7f32 as f64, 7.0]));
        t.insert("b".to_string(), Mat::scalar(0.1f32 as f64));
        let bytes = encode_checkpoint(&t);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut t = BTreeMap::new();
        t.insert("x".to_string(), Mat::zeros(3, 3));
        let mut bytes = encode_checkpoint(&t);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Parse { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Parse { offset: 0, .. })));
    }
}
