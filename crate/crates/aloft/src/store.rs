//! Binary container for named tensors plus a JSON metadata blob.
//!
//! The format is little-endian throughout and records raw `f64` bits, so a
//! write followed by a read reproduces every value exactly. Records are
//! written sorted by name, making the file a pure function of its contents.
//!
//! Layout: 8-byte magic, u32 version, u32 metadata length, metadata JSON,
//! u32 record count, then per record a u32 name length, the UTF-8 name, a
//! u32 rank, u64 dimensions, and the f64 element data.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ALFTCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed store: {0}")]
    Format(String),
    #[error("metadata error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad record: {0}")]
    BadRecord(String),
}

/// Serializes `records` (sorted by name) with `meta` to `path`.
pub fn write(
    path: &Path,
    meta: &serde_json::Value,
    records: &[(String, Tensor)],
) -> Result<(), StoreError> {
    let mut sorted: Vec<&(String, Tensor)> = records.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(StoreError::BadRecord(format!(
                "duplicate record name {:?}",
                pair[0].0
            )));
        }
    }
    let meta_bytes = serde_json::to_vec(meta)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_bytes);
    buf.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    for (name, tensor) in sorted {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a store file back into its metadata and named tensors (file order,
/// which is name order for files produced by [`write`]).
pub fn read(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>), StoreError> {
    let buf = fs::read(path)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(StoreError::Format(format!(
            "bad magic {:?}, expected {:?}",
            &magic[..magic.len().min(8)],
            MAGIC
        )));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(StoreError::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let meta_len = cur.u32()? as usize;
    let meta: serde_json::Value = serde_json::from_slice(cur.take(meta_len)?)?;
    let count = cur.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| StoreError::Format(format!("record {i}: name is not UTF-8: {e}")))?
            .to_string();
        let rank = cur.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(StoreError::Format(format!(
                "record {name:?}: implausible rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = cur.u64()?;
            if d == 0 || d > u32::MAX as u64 {
                return Err(StoreError::Format(format!(
                    "record {name:?}: implausible dimension {d}"
                )));
            }
            shape.push(d as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = cur.take(numel.checked_mul(8).ok_or_else(|| {
            StoreError::Format(format!("record {name:?}: element count overflows"))
        })?)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| StoreError::Format(format!("record {name:?}: {e}")))?;
        records.push((name, tensor));
    }
    if cur.pos != buf.len() {
        return Err(StoreError::Format(format!(
            "{} trailing bytes after last record",
            buf.len() - cur.pos
        )));
    }
    Ok((meta, records))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.pos + n > self.buf.len() {
            return Err(StoreError::Format(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
