//! RIFF/WAVE reading and writing, PCM signed 16-bit little-endian mono.
//!
//! Anything that is not 16 kHz / mono / PCM16 is rejected rather than
//! resampled, keeping ingestion bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AudioClip, DspError, SAMPLE_RATE};

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), DspError> {
    r.read_exact(buf)
        .map_err(|_| DspError::CorruptFile(format!("truncated {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, DspError> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16, DspError> {
    let mut b = [0u8; 2];
    read_exact_or(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

struct FmtChunk {
    audio_format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

/// Walks the RIFF chunks of a WAV file and returns the raw PCM payload
/// of the `data` chunk together with the parsed `fmt ` header.
fn parse_wav(path: &Path) -> Result<(FmtChunk, Vec<u8>), DspError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "RIFF header")?;
    if &magic != b"RIFF" {
        return Err(DspError::CorruptFile("missing RIFF magic".into()));
    }
    let _riff_size = read_u32(&mut r, "RIFF size")?;
    read_exact_or(&mut r, &mut magic, "WAVE tag")?;
    if &magic != b"WAVE" {
        return Err(DspError::CorruptFile("missing WAVE tag".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    loop {
        let mut id = [0u8; 4];
        match r.read_exact(&mut id) {
            Ok(()) => {}
            Err(_) => {
                return Err(DspError::CorruptFile("no data chunk".into()));
            }
        }
        let size = read_u32(&mut r, "chunk size")? as usize;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(DspError::CorruptFile("fmt chunk too small".into()));
                }
                let audio_format = read_u16(&mut r, "fmt")?;
                let channels = read_u16(&mut r, "fmt")?;
                let sample_rate = read_u32(&mut r, "fmt")?;
                let _byte_rate = read_u32(&mut r, "fmt")?;
                let _block_align = read_u16(&mut r, "fmt")?;
                let bits_per_sample = read_u16(&mut r, "fmt")?;
                // skip any fmt extension
                let mut rest = vec![0u8; size - 16 + (size & 1)];
                read_exact_or(&mut r, &mut rest, "fmt extension")?;
                fmt = Some(FmtChunk {
                    audio_format,
                    channels,
                    sample_rate,
                    bits_per_sample,
                });
            }
            b"data" => {
                let mut payload = vec![0u8; size];
                read_exact_or(&mut r, &mut payload, "data chunk")?;
                let fmt = fmt.ok_or_else(|| {
                    DspError::CorruptFile("data chunk before fmt chunk".into())
                })?;
                return Ok((fmt, payload));
            }
            _ => {
                // skip unknown chunk, keeping word alignment
                let mut skip = vec![0u8; size + (size & 1)];
                read_exact_or(&mut r, &mut skip, "chunk body")?;
            }
        }
    }
}

/// Loads a 16 kHz mono PCM16 WAV file, scaling samples to `[-1, 1]`
/// by division by 32768.
pub fn load_wav(path: &Path) -> Result<AudioClip, DspError> {
    let (fmt, payload) = parse_wav(path)?;
    if fmt.audio_format != 1 || fmt.bits_per_sample != 16 {
        return Err(DspError::UnsupportedFormat(format!(
            "need PCM 16-bit, got format {} with {} bits",
            fmt.audio_format, fmt.bits_per_sample
        )));
    }
    if fmt.channels != 1 {
        return Err(DspError::UnsupportedFormat(format!(
            "need mono, got {} channels",
            fmt.channels
        )));
    }
    if fmt.sample_rate != SAMPLE_RATE {
        return Err(DspError::UnsupportedFormat(format!(
            "need {SAMPLE_RATE} Hz, got {} Hz",
            fmt.sample_rate
        )));
    }
    if payload.len() % 2 != 0 {
        return Err(DspError::CorruptFile("odd data chunk length".into()));
    }
    let samples: Vec<f32> = payload
        .chunks_exact(2)
        .map(|b| f32::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
        .collect();
    AudioClip::new(samples, SAMPLE_RATE)
}

/// Number of samples in a WAV file, from the header alone.
pub fn wav_sample_count(path: &Path) -> Result<usize, DspError> {
    let (fmt, payload) = parse_wav(path)?;
    if fmt.channels == 0 || fmt.bits_per_sample == 0 {
        return Err(DspError::CorruptFile("zeroed fmt fields".into()));
    }
    let bytes_per_frame = usize::from(fmt.channels) * usize::from(fmt.bits_per_sample / 8);
    Ok(payload.len() / bytes_per_frame.max(1))
}

/// Writes a mono PCM16 WAV file. Samples are clamped to `[-1, 1]` and
/// scaled by 32767.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<(), DspError> {
    let mut w = BufWriter::new(File::create(path)?);
    let data_len = (samples.len() * 2) as u32;
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&(sample_rate * 2).to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?;
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_length_and_zeros() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples = vec![0.0f32; 10080];
        write_wav(&path, &samples, SAMPLE_RATE).unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.len(), 10080);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
        assert_eq!(wav_sample_count(&path).unwrap(), 10080);
    }

    #[test]
    fn rejects_wrong_rate() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t44.wav");
        write_wav(&path, &[0.1, 0.2, -0.1], 44_100).unwrap();
        assert!(matches!(
            load_wav(&path),
            Err(DspError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn rejects_stereo() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("st.wav");
        // hand-build a stereo header with an empty data chunk
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&36u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&64000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_wav(&path),
            Err(DspError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn rejects_truncated_data() {
        let dir = tempdir().unwrap();
        let good = dir.path().join("g.wav");
        write_wav(&good, &[0.5f32; 100], SAMPLE_RATE).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let bad = dir.path().join("b.wav");
        std::fs::write(&bad, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_wav(&bad), Err(DspError::CorruptFile(_))));
    }

    #[test]
    fn skips_extra_chunks() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.wav");
        // LIST chunk between fmt and data
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(b"INFO");
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&0x4000i16.to_le_bytes());
        bytes.extend_from_slice(&(-0x4000i16).to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.len(), 2);
        assert!((clip.samples()[0] - 0.5).abs() < 1e-6);
        assert!((clip.samples()[1] + 0.5).abs() < 1e-6);
    }
}
