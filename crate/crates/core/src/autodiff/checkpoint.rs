//! Binary checkpoint container.
//!
//! Layout: the magic string `DNAHNET1`, a little-endian `u64` entry count,
//! then a manifest (per entry: `u32` name length, UTF-8 name, `u8` dtype tag,
//! `u32` rank, `u64` extents), followed by row-major little-endian payloads
//! in manifest order. Unknown magic, short reads and trailing bytes are all
//! rejected.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::DType;

pub const MAGIC: &[u8; 8] = b"DNAHNET1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a model checkpoint")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorPayload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl TensorPayload {
    pub fn dtype(&self) -> DType {
        match self {
            TensorPayload::F32(_) => DType::F32,
            TensorPayload::F64(_) => DType::F64,
            TensorPayload::U64(_) => DType::U64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorPayload::F32(v) => v.len(),
            TensorPayload::F64(v) => v.len(),
            TensorPayload::U64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lossy view as f64 values (f32 payloads upcast; u64 payloads error).
    pub fn as_f64(&self) -> Result<Vec<f64>, CheckpointError> {
        match self {
            TensorPayload::F32(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            TensorPayload::F64(v) => Ok(v.clone()),
            TensorPayload::U64(_) => Err(CheckpointError::Corrupt(
                "expected a floating-point entry".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: TensorPayload,
}

impl CheckpointEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, payload: TensorPayload) -> Self {
        let e = CheckpointEntry {
            name: name.into(),
            shape,
            payload,
        };
        debug_assert_eq!(e.shape.iter().product::<usize>(), e.payload.len());
        e
    }
}

pub fn write_checkpoint(path: &Path, entries: &[CheckpointEntry]) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[e.payload.dtype().tag()])?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for e in entries {
        match &e.payload {
            TensorPayload::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorPayload::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorPayload::U64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_corrupt(
    r: &mut impl Read,
    buf: &mut [u8],
    what: &str,
) -> Result<(), CheckpointError> {
    r.read_exact(buf)
        .map_err(|_| CheckpointError::Corrupt(format!("truncated while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact_or_corrupt(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact_or_corrupt(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let count = read_u64(&mut r, "entry count")? as usize;

    struct Meta {
        name: String,
        dtype: DType,
        shape: Vec<usize>,
    }
    let mut metas = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = read_u32(&mut r, "name length")? as usize;
        if name_len > 1 << 20 {
            return Err(CheckpointError::Corrupt(format!(
                "entry {i}: unreasonable name length {name_len}"
            )));
        }
        let mut name_buf = vec![0u8; name_len];
        read_exact_or_corrupt(&mut r, &mut name_buf, "name")?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| CheckpointError::Corrupt(format!("entry {i}: name is not UTF-8")))?;
        let mut tag = [0u8; 1];
        read_exact_or_corrupt(&mut r, &mut tag, "dtype tag")?;
        let dtype = DType::from_tag(tag[0]).ok_or_else(|| {
            CheckpointError::Corrupt(format!("entry {i} ({name}): unknown dtype tag {}", tag[0]))
        })?;
        let rank = read_u32(&mut r, "rank")? as usize;
        if rank > 8 {
            return Err(CheckpointError::Corrupt(format!(
                "entry {i} ({name}): unreasonable rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, "extent")? as usize);
        }
        metas.push(Meta { name, dtype, shape });
    }

    let mut entries = Vec::with_capacity(count);
    for m in metas {
        let n: usize = m.shape.iter().product();
        let mut bytes = vec![0u8; n * m.dtype.byte_width()];
        read_exact_or_corrupt(&mut r, &mut bytes, &format!("payload of {}", m.name))?;
        let payload = match m.dtype {
            DType::F32 => TensorPayload::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorPayload::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U64 => TensorPayload::U64(
                bytes
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        entries.push(CheckpointEntry {
            name: m.name,
            shape: m.shape,
            payload,
        });
    }

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Corrupt(
            "trailing bytes after last payload".into(),
        ));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<CheckpointEntry> {
        vec![
            CheckpointEntry::new(
                "layer.w",
                vec![2, 3],
                TensorPayload::F64(vec![1.0, -2.5, 0.0, 3.25, 4.0, 5.5]),
            ),
            CheckpointEntry::new("step", vec![1], TensorPayload::U64(vec![42])),
            CheckpointEntry::new("small", vec![2], TensorPayload::F32(vec![0.5, -0.5])),
        ]
    }

    #[test]
    fn round_trip_preserves_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let entries = sample();
        write_checkpoint(&path, &entries).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"NOTMAGIC\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &sample()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn rejects_trailing_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0xFF);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(CheckpointError::Corrupt(_))
        ));
    }
}
