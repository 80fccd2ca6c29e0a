//! Binary artifact container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "SPMFBIN\0"
//! version    u32      FORMAT_VERSION
//! kind       4 bytes  artifact tag, e.g. "SPKM"
//! header_len u32      length of the JSON header
//! header     bytes    UTF-8 JSON metadata
//! n_arrays   u32
//! per array: len u64, then len f64 values
//! ```
//!
//! Floating-point payloads live in the arrays so they round-trip bit-exactly.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SPMFBIN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug)]
pub(crate) struct Container {
    pub kind: [u8; 4],
    pub header: serde_json::Value,
    pub arrays: Vec<Vec<f64>>,
}

impl Container {
    pub fn new<H: Serialize>(kind: &[u8; 4], header: &H, arrays: Vec<Vec<f64>>) -> Result<Self> {
        Ok(Container {
            kind: *kind,
            header: serde_json::to_value(header)
                .map_err(|e| Error::Data(format!("cannot encode header: {e}")))?,
            arrays,
        })
    }

    pub fn header<H: DeserializeOwned>(&self) -> std::result::Result<H, String> {
        serde_json::from_value(self.header.clone()).map_err(|e| format!("bad header: {e}"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("JSON value always serializes");
        let payload: usize = self.arrays.iter().map(|a| 8 + 8 * a.len()).sum();
        let mut out = Vec::with_capacity(24 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
        out.extend_from_slice(&self.kind);
        out.write_u32::<LittleEndian>(header.len() as u32).unwrap();
        out.extend_from_slice(&header);
        out.write_u32::<LittleEndian>(self.arrays.len() as u32).unwrap();
        for a in &self.arrays {
            out.write_u64::<LittleEndian>(a.len() as u64).unwrap();
            for &v in a {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], expected_kind: &[u8; 4]) -> std::result::Result<Self, String> {
        let mut cur = Cursor::new(bytes);
        let short = |_| "file is truncated".to_string();
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(short)?;
        if &magic != MAGIC {
            return Err("bad magic bytes".into());
        }
        let version = cur.read_u32::<LittleEndian>().map_err(short)?;
        if version != FORMAT_VERSION {
            return Err(format!(
                "format version {version}, this build reads version {FORMAT_VERSION}"
            ));
        }
        let mut kind = [0u8; 4];
        cur.read_exact(&mut kind).map_err(short)?;
        if &kind != expected_kind {
            return Err(format!(
                "artifact kind {:?}, expected {:?}",
                String::from_utf8_lossy(&kind),
                String::from_utf8_lossy(expected_kind)
            ));
        }
        let header_len = cur.read_u32::<LittleEndian>().map_err(short)? as usize;
        let remaining = bytes.len() - cur.position() as usize;
        if header_len > remaining {
            return Err("file is truncated".into());
        }
        let mut header = vec![0u8; header_len];
        cur.read_exact(&mut header).map_err(short)?;
        let header: serde_json::Value =
            serde_json::from_slice(&header).map_err(|e| format!("bad header: {e}"))?;
        let n = cur.read_u32::<LittleEndian>().map_err(short)?;
        let mut arrays = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let len = cur.read_u64::<LittleEndian>().map_err(short)? as usize;
            let remaining = bytes.len() - cur.position() as usize;
            if len.checked_mul(8).map_or(true, |b| b > remaining) {
                return Err("file is truncated".into());
            }
            let mut a = vec![0.0; len];
            cur.read_f64_into::<LittleEndian>(&mut a).map_err(short)?;
            arrays.push(a);
        }
        if cur.position() as usize != bytes.len() {
            return Err("trailing bytes after last array".into());
        }
        Ok(Container {
            kind,
            header,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected_kind: &[u8; 4]) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes, expected_kind).map_err(|reason| Error::CorruptModel {
            path: path.to_path_buf(),
            reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container::new(
            b"TEST",
            &serde_json::json!({"a": 1}),
            vec![vec![1.0, f64::MIN_POSITIVE, -0.0], vec![]],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes(), b"TEST").unwrap();
        assert_eq!(back.header, c.header);
        let bits = |a: &Vec<Vec<f64>>| -> Vec<Vec<u64>> {
            a.iter().map(|v| v.iter().map(|x| x.to_bits()).collect()).collect()
        };
        assert_eq!(bits(&back.arrays), bits(&c.arrays));
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().to_bytes();
        for cut in [0, 7, 15, 30, bytes.len() - 1] {
            assert!(Container::from_bytes(&bytes[..cut], b"TEST").is_err(), "cut {cut}");
        }
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(Container::from_bytes(&v2, b"TEST").unwrap_err().contains("version"));
        assert!(Container::from_bytes(&bytes, b"XXXX").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::from_bytes(&extra, b"TEST").is_err());
    }
}
