//! MFCC front end: Hann window, magnitude-squared FFT, triangular mel
//! filterbank, log, orthonormal DCT-II, first 32 coefficients.
//!
//! All per-frame arithmetic runs in f64 and is cast to f32 at the end,
//! so the output is deterministic and comfortably inside the tolerance
//! of an independently written reference pipeline.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, DspError, FeatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MfccConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub n_mel: usize,
    pub n_mfcc: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            n_mel: 64,
            n_mfcc: 32,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Precomputed MFCC pipeline for one sample rate. Pure given the input,
/// so one extractor can serve concurrent callers.
pub struct MfccExtractor {
    cfg: MfccConfig,
    sample_rate: u32,
    window_len: usize,
    hop_len: usize,
    window: Vec<f64>,
    /// `n_mel` rows of `fft_size / 2 + 1` triangle weights, row-major.
    filterbank: Vec<f64>,
    /// `n_mfcc` rows of `n_mel` orthonormal DCT-II factors, row-major.
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig, sample_rate: u32) -> Result<Self, DspError> {
        let window_len = (cfg.window_ms * f64::from(sample_rate) / 1000.0).round() as usize;
        let hop_len = (cfg.hop_ms * f64::from(sample_rate) / 1000.0).round() as usize;
        if cfg.n_mfcc > cfg.n_mel {
            return Err(DspError::InvalidAudio(format!(
                "n_mfcc {} exceeds n_mel {}",
                cfg.n_mfcc, cfg.n_mel
            )));
        }
        if cfg.fft_size < window_len || window_len == 0 || hop_len == 0 {
            return Err(DspError::InvalidAudio(
                "fft size must cover the analysis window".into(),
            ));
        }
        if cfg.fmax_hz <= cfg.fmin_hz || cfg.fmax_hz > f64::from(sample_rate) / 2.0 {
            return Err(DspError::InvalidAudio("bad mel frequency range".into()));
        }

        // periodic Hann
        let window: Vec<f64> = (0..window_len)
            .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / window_len as f64).cos()))
            .collect();

        let n_bins = cfg.fft_size / 2 + 1;
        let mel_lo = hz_to_mel(cfg.fmin_hz);
        let mel_hi = hz_to_mel(cfg.fmax_hz);
        let edges: Vec<f64> = (0..cfg.n_mel + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mel + 1) as f64))
            .collect();
        let mut filterbank = vec![0.0; cfg.n_mel * n_bins];
        for m in 0..cfg.n_mel {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * f64::from(sample_rate) / cfg.fft_size as f64;
                let w = if f > lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                filterbank[m * n_bins + k] = w;
            }
        }

        let n = cfg.n_mel as f64;
        let mut dct = vec![0.0; cfg.n_mfcc * cfg.n_mel];
        for k in 0..cfg.n_mfcc {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for j in 0..cfg.n_mel {
                dct[k * cfg.n_mel + j] =
                    scale * (std::f64::consts::PI * (j as f64 + 0.5) * k as f64 / n).cos();
            }
        }

        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(MfccExtractor {
            cfg,
            sample_rate,
            window_len,
            hop_len,
            window,
            filterbank,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// Frames produced for a clip of `samples` length, if it covers at
    /// least one analysis window: `1 + floor((len - window) / hop)`.
    pub fn frame_count(&self, samples: usize) -> Option<usize> {
        if samples < self.window_len {
            None
        } else {
            Some(1 + (samples - self.window_len) / self.hop_len)
        }
    }

    /// Triangle weight of mel filter `m` at FFT bin `k`.
    pub fn filter_weight(&self, m: usize, k: usize) -> f64 {
        self.filterbank[m * (self.cfg.fft_size / 2 + 1) + k]
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<FeatureMatrix, DspError> {
        if clip.sample_rate() != self.sample_rate {
            return Err(DspError::UnsupportedFormat(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.sample_rate,
                clip.sample_rate()
            )));
        }
        let frames = self.frame_count(clip.len()).ok_or(DspError::TooShort {
            samples: clip.len(),
            required: self.window_len,
        })?;
        let n_bins = self.cfg.fft_size / 2 + 1;
        let mut out = FeatureMatrix::zeros(self.cfg.n_mfcc, frames);
        let mut buf = vec![Complex::new(0.0f64, 0.0f64); self.cfg.fft_size];
        let mut power = vec![0.0f64; n_bins];
        let mut log_mel = vec![0.0f64; self.cfg.n_mel];
        for t in 0..frames {
            let start = t * self.hop_len;
            for i in 0..self.cfg.fft_size {
                let v = if i < self.window_len {
                    f64::from(clip.samples()[start + i]) * self.window[i]
                } else {
                    0.0
                };
                buf[i] = Complex::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            for m in 0..self.cfg.n_mel {
                let row = &self.filterbank[m * n_bins..(m + 1) * n_bins];
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                log_mel[m] = (e + self.cfg.log_floor).ln();
            }
            for k in 0..self.cfg.n_mfcc {
                let row = &self.dct[k * self.cfg.n_mel..(k + 1) * self.cfg.n_mel];
                let c: f64 = row.iter().zip(&log_mel).map(|(d, l)| d * l).sum();
                out.set(k, t, c as f32);
            }
        }
        Ok(out)
    }
}
