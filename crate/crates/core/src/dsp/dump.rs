//! Debug dumps of channel x frame matrices.
//!
//! Layout: 4-byte magic (`SGF1` for features, `SGZ1` for gates), u32
//! channel count, u32 frame count, then channel-major 32-bit
//! little-endian floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DspError, FeatureMatrix};

pub const FEATURE_MAGIC: [u8; 4] = *b"SGF1";
pub const GATE_MAGIC: [u8; 4] = *b"SGZ1";

pub fn write_matrix(path: &Path, magic: [u8; 4], m: &FeatureMatrix) -> Result<(), DspError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&magic)?;
    w.write_all(&(m.channels() as u32).to_le_bytes())?;
    w.write_all(&(m.frames() as u32).to_le_bytes())?;
    for &v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<([u8; 4], FeatureMatrix), DspError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| DspError::CorruptFile("truncated dump header".into()))?;
    if magic != FEATURE_MAGIC && magic != GATE_MAGIC {
        return Err(DspError::CorruptFile("unknown dump magic".into()));
    }
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| DspError::CorruptFile("truncated dump header".into()))?;
    let channels = u32::from_le_bytes(b) as usize;
    r.read_exact(&mut b)
        .map_err(|_| DspError::CorruptFile("truncated dump header".into()))?;
    let frames = u32::from_le_bytes(b) as usize;
    let mut data = Vec::with_capacity(channels * frames);
    for _ in 0..channels * frames {
        r.read_exact(&mut b)
            .map_err(|_| DspError::CorruptFile("truncated dump data".into()))?;
        data.push(f32::from_le_bytes(b));
    }
    Ok((magic, FeatureMatrix::from_data(channels, frames, data)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.sgf");
        let m = FeatureMatrix::from_data(3, 2, vec![1.0, -2.0, 0.5, 0.0, 3.5, -0.25]);
        write_matrix(&path, FEATURE_MAGIC, &m).unwrap();
        let (magic, back) = read_matrix(&path).unwrap();
        assert_eq!(magic, FEATURE_MAGIC);
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_unknown_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.sgf");
        std::fs::write(&path, b"WHAT\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            read_matrix(&path),
            Err(DspError::CorruptFile(_))
        ));
    }
}
