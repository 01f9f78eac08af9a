//! Segment-level scoring with a frozen gate network.
//!
//! Each labeled segment is sliced from its audio file, split into at
//! most 100-second pieces, and every piece runs through MFCC ->
//! normalize -> gate network -> hard gates -> score. A split segment
//! reports the duration-weighted mean of its piece scores. No
//! postprocessing is applied on top.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::compute::ComputeError;
use crate::dsp::{self, load_wav, DspError, MfccConfig, MfccExtractor};
use crate::gates::{vad_score, GateNet};
use crate::train::checkpointing;

/// Longest slice scored in one pass, seconds.
pub const MAX_SEGMENT_S: f64 = 100.0;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("missing audio file {0}")]
    MissingAudio(PathBuf),
    #[error("segment too short to score: {0:.4} s")]
    TooShort(f64),
    #[error("invalid segment [{start_s}, {end_s}) in {path}")]
    InvalidSegment {
        path: String,
        start_s: f64,
        end_s: f64,
    },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    Checkpoint(#[from] crate::compute::checkpoint::CheckpointError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One labeled span of an audio file, dataset-native label string.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRecord {
    pub audio_path: String,
    pub start_s: f64,
    pub end_s: f64,
    pub label: String,
}

impl SegmentRecord {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// A segment together with its open-gate score in `[0, 32]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSegment {
    pub segment: SegmentRecord,
    pub score: f64,
}

/// Splits a segment into consecutive pieces of at most `max_s` seconds
/// covering `[start, end)` exactly.
pub fn split_long(seg: &SegmentRecord, max_s: f64) -> Vec<SegmentRecord> {
    let mut out = Vec::new();
    let mut start = seg.start_s;
    while seg.end_s - start > max_s {
        out.push(SegmentRecord {
            audio_path: seg.audio_path.clone(),
            start_s: start,
            end_s: start + max_s,
            label: seg.label.clone(),
        });
        start += max_s;
    }
    out.push(SegmentRecord {
        audio_path: seg.audio_path.clone(),
        start_s: start,
        end_s: seg.end_s,
        label: seg.label.clone(),
    });
    out
}

/// Threshold rule on a score: speech iff `score >= threshold`.
pub fn decide(score: f64, threshold: f64) -> bool {
    score >= threshold
}

/// A frozen gate network plus the MFCC front end.
///
/// Parameters are immutable after loading; scoring takes `&self` and may
/// run concurrently. Loaded audio is cached per file so segments of one
/// clip do not re-read it.
pub struct Scorer {
    net: GateNet<f32>,
    extractor: MfccExtractor,
    cache: Mutex<HashMap<PathBuf, std::sync::Arc<dsp::AudioClip>>>,
}

impl Scorer {
    pub fn new(net: GateNet<f32>) -> Result<Self, InferError> {
        let extractor = MfccExtractor::new(MfccConfig::default(), dsp::SAMPLE_RATE)?;
        Ok(Scorer {
            net,
            extractor,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Loads the gate network from a checkpoint (either a full training
    /// checkpoint or an inference export).
    pub fn from_checkpoint(path: &Path) -> Result<Self, InferError> {
        let net = checkpointing::load_gate_net(path)?;
        Self::new(net)
    }

    pub fn gate_net(&self) -> &GateNet<f32> {
        &self.net
    }

    fn clip_for(&self, path: &Path) -> Result<std::sync::Arc<dsp::AudioClip>, InferError> {
        if let Some(clip) = self.cache.lock().unwrap().get(path) {
            return Ok(clip.clone());
        }
        if !path.exists() {
            return Err(InferError::MissingAudio(path.to_path_buf()));
        }
        let clip = std::sync::Arc::new(load_wav(path)?);
        self.cache
            .lock()
            .unwrap()
            .insert(path.to_path_buf(), clip.clone());
        Ok(clip)
    }

    /// Scores one piece that is already at most [`MAX_SEGMENT_S`] long.
    fn score_piece(&self, seg: &SegmentRecord) -> Result<f64, InferError> {
        let clip = self.clip_for(Path::new(&seg.audio_path))?;
        let rate = f64::from(clip.sample_rate());
        if seg.start_s < 0.0 || seg.end_s <= seg.start_s {
            return Err(InferError::InvalidSegment {
                path: seg.audio_path.clone(),
                start_s: seg.start_s,
                end_s: seg.end_s,
            });
        }
        let start = (seg.start_s * rate).round() as usize;
        // labels sometimes run a hair past the waveform; clamp to the file
        let end = ((seg.end_s * rate).round() as usize).min(clip.len());
        if start >= end {
            return Err(InferError::InvalidSegment {
                path: seg.audio_path.clone(),
                start_s: seg.start_s,
                end_s: seg.end_s,
            });
        }
        if end - start < self.extractor.window_len() {
            return Err(InferError::TooShort((end - start) as f64 / rate));
        }
        let slice = clip.slice(start, end)?;
        let features = self.extractor.compute(&slice)?;
        let features = dsp::normalize_features(&features);
        let out = self.net.gate_output(&features)?;
        Ok(vad_score(&out.gates))
    }

    /// Scores a segment of any length; longer segments are split and
    /// recombined as the duration-weighted mean of their piece scores.
    pub fn score_segment(&self, seg: &SegmentRecord) -> Result<ScoredSegment, InferError> {
        let pieces = split_long(seg, MAX_SEGMENT_S);
        let mut weighted = 0.0;
        let mut total = 0.0;
        for piece in &pieces {
            let s = self.score_piece(piece)?;
            weighted += s * piece.duration_s();
            total += piece.duration_s();
        }
        Ok(ScoredSegment {
            segment: seg.clone(),
            score: weighted / total,
        })
    }

    /// Scores many segments, optionally in parallel, preserving order.
    pub fn score_all(
        &self,
        segments: &[SegmentRecord],
        jobs: usize,
    ) -> Result<Vec<ScoredSegment>, InferError> {
        if jobs <= 1 {
            segments.iter().map(|s| self.score_segment(s)).collect()
        } else {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .expect("thread pool");
            pool.install(|| {
                segments
                    .par_iter()
                    .map(|s| self.score_segment(s))
                    .collect()
            })
        }
    }
}

// ---------------------------------------------------------------------------
// CSV interfaces
// ---------------------------------------------------------------------------

/// Reads `audio_path,start_s,end_s,label` rows. Paths are resolved
/// relative to the CSV's directory unless absolute.
pub fn read_segments_csv(path: &Path) -> Result<Vec<SegmentRecord>, InferError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() < 4 {
            return Err(InferError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("segments row has {} fields, need 4", row.len()),
            )));
        }
        let rel = Path::new(&row[0]);
        let audio_path = if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            base.join(rel)
        };
        out.push(SegmentRecord {
            audio_path: audio_path.to_string_lossy().into_owned(),
            start_s: row[1].parse().map_err(bad_number)?,
            end_s: row[2].parse().map_err(bad_number)?,
            label: row[3].to_string(),
        });
    }
    Ok(out)
}

fn bad_number(e: std::num::ParseFloatError) -> InferError {
    InferError::Io(std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        format!("bad number in csv: {e}"),
    ))
}

/// Writes `audio_path,start_s,end_s,label` rows.
pub fn write_segments_csv(path: &Path, segments: &[SegmentRecord]) -> Result<(), InferError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["audio_path", "start_s", "end_s", "label"])?;
    for s in segments {
        w.write_record([
            s.audio_path.as_str(),
            &format!("{:.3}", s.start_s),
            &format!("{:.3}", s.end_s),
            s.label.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `audio_path,start_s,end_s,label,score` rows; with a threshold,
/// a `decision` column is appended.
pub fn write_scored_csv(
    path: &Path,
    scored: &[ScoredSegment],
    threshold: Option<f64>,
) -> Result<(), InferError> {
    let mut w = csv::Writer::from_path(path)?;
    match threshold {
        None => w.write_record(["audio_path", "start_s", "end_s", "label", "score"])?,
        Some(_) => {
            w.write_record(["audio_path", "start_s", "end_s", "label", "score", "decision"])?
        }
    }
    for s in scored {
        let base = [
            s.segment.audio_path.clone(),
            format!("{:.3}", s.segment.start_s),
            format!("{:.3}", s.segment.end_s),
            s.segment.label.clone(),
            format!("{:.6}", s.score),
        ];
        match threshold {
            None => w.write_record(&base)?,
            Some(th) => {
                let mut row = base.to_vec();
                row.push(if decide(s.score, th) { "speech" } else { "non_speech" }.into());
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_scored_csv`] (the threshold column is
/// ignored if present).
pub fn read_scored_csv(path: &Path) -> Result<Vec<ScoredSegment>, InferError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() < 5 {
            return Err(InferError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("scored row has {} fields, need 5", row.len()),
            )));
        }
        out.push(ScoredSegment {
            segment: SegmentRecord {
                audio_path: row[0].to_string(),
                start_s: row[1].parse().map_err(bad_number)?,
                end_s: row[2].parse().map_err(bad_number)?,
                label: row[3].to_string(),
            },
            score: row[4].parse().map_err(bad_number)?,
        });
    }
    Ok(out)
}
