//! Training manifests and dataset expansion.
//!
//! Manifest format: one clip per line, `audio_path<TAB>label<TAB>duration_s`.
//! Relative audio paths are resolved against the manifest's directory.
//! Background clips (label 0) longer than the configured maximum are cut
//! into consecutive chunks so the network never sees long noise spans.

use std::path::{Path, PathBuf};

use crate::classifier::BACKGROUND_CLASS;
use crate::dsp::wav::wav_sample_count;
use crate::dsp::{AudioClip, SAMPLE_RATE};

use super::TrainError;

/// Samples in one MFCC analysis window; shorter remainders are dropped.
const MIN_CHUNK: usize = 400;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    pub label: usize,
    pub duration_s: f64,
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, TrainError> {
    let text = std::fs::read_to_string(path).map_err(|e| TrainError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let bad = |message: String| TrainError::Manifest {
            path: path.to_path_buf(),
            message: format!("line {}: {message}", lineno + 1),
        };
        let rel = fields
            .next()
            .ok_or_else(|| bad("missing audio path".into()))?;
        let label: usize = fields
            .next()
            .ok_or_else(|| bad("missing label".into()))?
            .parse()
            .map_err(|_| bad("label is not an integer".into()))?;
        let duration_s: f64 = fields
            .next()
            .ok_or_else(|| bad("missing duration".into()))?
            .parse()
            .map_err(|_| bad("duration is not a number".into()))?;
        let rel_path = Path::new(rel);
        let audio_path = if rel_path.is_absolute() {
            rel_path.to_path_buf()
        } else {
            base.join(rel_path)
        };
        if !audio_path.exists() {
            return Err(bad(format!("audio file not found: {}", audio_path.display())));
        }
        out.push(ManifestEntry {
            audio_path,
            label,
            duration_s,
        });
    }
    if out.is_empty() {
        return Err(TrainError::Manifest {
            path: path.to_path_buf(),
            message: "manifest is empty".into(),
        });
    }
    Ok(out)
}

/// Cuts a clip into consecutive chunks of at most `max_s` seconds. The
/// final remainder is kept only if it covers one MFCC window.
pub fn split_background(clip: &AudioClip, max_s: f64) -> Vec<AudioClip> {
    let chunk = (max_s * f64::from(SAMPLE_RATE)).floor() as usize;
    let mut out = Vec::new();
    let mut start = 0;
    while start < clip.len() {
        let end = (start + chunk).min(clip.len());
        if end - start >= MIN_CHUNK {
            out.push(clip.slice(start, end).expect("in-bounds chunk"));
        }
        start = end;
    }
    out
}

/// One training item: a labeled sample range of an audio file.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub audio_path: PathBuf,
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

/// Expands manifest entries into training items, cutting background
/// clips into chunks of at most `max_background_s` seconds. Items
/// shorter than one MFCC window are dropped.
pub fn expand_dataset(
    entries: &[ManifestEntry],
    max_background_s: f64,
    n_classes: usize,
) -> Result<Vec<DatasetItem>, TrainError> {
    let chunk = (max_background_s * f64::from(SAMPLE_RATE)).floor() as usize;
    let mut out = Vec::new();
    for e in entries {
        if e.label >= n_classes {
            return Err(TrainError::LabelOutOfRange {
                label: e.label,
                n_classes,
            });
        }
        let len = wav_sample_count(&e.audio_path)?;
        if e.label == BACKGROUND_CLASS && len > chunk {
            let mut start = 0;
            while start < len {
                let end = (start + chunk).min(len);
                if end - start >= MIN_CHUNK {
                    out.push(DatasetItem {
                        audio_path: e.audio_path.clone(),
                        label: e.label,
                        start,
                        end,
                    });
                }
                start = end;
            }
        } else if len >= MIN_CHUNK {
            out.push(DatasetItem {
                audio_path: e.audio_path.clone(),
                label: e.label,
                start: 0,
                end: len,
            });
        }
    }
    if out.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    Ok(out)
}
