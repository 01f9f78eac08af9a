//! Audio ingestion, MFCC features, normalization and augmentations.

pub mod augment;
pub mod dump;
pub mod mfcc;
pub mod wav;

pub use augment::{add_white_noise, spec_augment, spec_cutout, time_shift, AugmentConfig};
pub use mfcc::{MfccConfig, MfccExtractor};
pub use wav::{load_wav, write_wav};

use thiserror::Error;

/// Sample rate every ingested clip must have.
pub const SAMPLE_RATE: u32 = 16_000;
/// Number of MFCC channels the networks consume.
pub const FEATURE_CHANNELS: usize = 32;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("clip too short: {samples} samples, need at least {required}")]
    TooShort { samples: usize, required: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
}

/// Mono waveform at [`SAMPLE_RATE`]; samples in `[-1, 1]` and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate != SAMPLE_RATE {
            return Err(DspError::UnsupportedFormat(format!(
                "sample rate {sample_rate} Hz, expected {SAMPLE_RATE}"
            )));
        }
        if samples.is_empty() {
            return Err(DspError::InvalidAudio("empty clip".into()));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(DspError::InvalidAudio("non-finite sample".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Sub-clip over a sample range; the range must be non-empty and in bounds.
    pub fn slice(&self, start: usize, end: usize) -> Result<AudioClip, DspError> {
        if start >= end || end > self.samples.len() {
            return Err(DspError::InvalidAudio(format!(
                "bad slice [{start}, {end}) of {} samples",
                self.samples.len()
            )));
        }
        Ok(AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        })
    }
}

/// 32 x T matrix of MFCC features, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    channels: usize,
    frames: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn zeros(channels: usize, frames: usize) -> Self {
        FeatureMatrix {
            channels,
            frames,
            data: vec![0.0; channels * frames],
        }
    }

    pub fn from_data(channels: usize, frames: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * frames);
        FeatureMatrix {
            channels,
            frames,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize) -> f32 {
        self.data[c * self.frames + t]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, v: f32) {
        self.data[c * self.frames + t] = v;
    }

    /// Channel-major backing storage.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, c: usize) -> &[f32] {
        &self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standardizes each channel to mean 0 / std 1 across time.
///
/// Population statistics; the standard deviation is clamped below at
/// `1e-5` so constant channels map to zero instead of dividing by zero.
pub fn normalize_features(f: &FeatureMatrix) -> FeatureMatrix {
    let mut out = f.clone();
    let frames = f.frames() as f64;
    for c in 0..f.channels() {
        let row = f.row(c);
        let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / frames;
        let var = row
            .iter()
            .map(|&v| {
                let d = f64::from(v) - mean;
                d * d
            })
            .sum::<f64>()
            / frames;
        let std = var.sqrt().max(1e-5);
        for t in 0..f.frames() {
            out.set(c, t, ((f64::from(f.get(c, t)) - mean) / std) as f32);
        }
    }
    out
}
