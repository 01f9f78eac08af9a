//! Binary checkpoint format.
//!
//! Layout: magic `SGVD`, u32 version, u32 tensor count, then per tensor
//! a u32 name length, the UTF-8 name, u32 rank, u32 dims and the values
//! as 32-bit little-endian floats. Training checkpoints carry parameter
//! values, batch-norm running statistics, optimizer momentum buffers
//! (`opt/` prefix) and metadata scalars (`meta/` prefix); inference
//! exports carry only the gate-network values and running statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SGVD";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {got:?}, expected {expected:?}")]
    WrongShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint was written with a different config (hash mismatch)")]
    ConfigMismatch,
}

/// One named tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn scalar(name: impl Into<String>, value: f32) -> Self {
        TensorEntry {
            name: name.into(),
            dims: vec![1],
            data: vec![value],
        }
    }
}

pub fn save(path: &Path, entries: &[TensorEntry]) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(e.dims.len() as u32).to_le_bytes())?;
        for &d in &e.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        let expect: u64 = e.dims.iter().map(|&d| u64::from(d)).product();
        assert_eq!(expect, e.data.len() as u64, "entry dims disagree with data");
        for &v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| CheckpointError::Corrupt("truncated".into()))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load(path: &Path) -> Result<Vec<TensorEntry>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CheckpointError::Corrupt("truncated header".into()))?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Corrupt("oversized tensor name".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| CheckpointError::Corrupt("truncated name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Corrupt("non-utf8 tensor name".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(CheckpointError::Corrupt(format!("rank {rank} too large")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r)?);
        }
        let n: u64 = dims.iter().map(|&d| u64::from(d)).product();
        let mut data = Vec::with_capacity(n as usize);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| CheckpointError::Corrupt("truncated tensor data".into()))?;
            data.push(f32::from_le_bytes(buf));
        }
        entries.push(TensorEntry { name, dims, data });
    }
    Ok(entries)
}
