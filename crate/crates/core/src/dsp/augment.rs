//! Waveform and spectrogram augmentations.
//!
//! Every augmentation is a pure function of (input, RNG state) and
//! preserves shape, so a fixed seed reproduces the whole chain.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{AudioClip, FeatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Maximum absolute time shift, milliseconds.
    pub time_shift_ms: f64,
    /// Added-noise RMS level range, dBFS.
    pub noise_db_min: f64,
    pub noise_db_max: f64,
    /// Probability of adding noise at all.
    pub noise_prob: f64,
    pub specaug_time_masks: usize,
    pub specaug_time_width: usize,
    pub specaug_freq_masks: usize,
    pub specaug_freq_width: usize,
    pub speccutout_rects: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            time_shift_ms: 5.0,
            noise_db_min: -90.0,
            noise_db_max: -46.0,
            noise_prob: 0.8,
            specaug_time_masks: 2,
            specaug_time_width: 25,
            specaug_freq_masks: 2,
            specaug_freq_width: 15,
            speccutout_rects: 5,
        }
    }
}

/// Shifts the waveform by a uniform integer number of samples in
/// `[-max, +max]`, zero-filling the vacated positions. Length preserved.
pub fn time_shift<R: Rng>(clip: &AudioClip, rng: &mut R, cfg: &AugmentConfig) -> AudioClip {
    let max = (cfg.time_shift_ms * f64::from(clip.sample_rate()) / 1000.0).round() as i64;
    let shift = rng.random_range(-max..=max);
    shift_by(clip, shift)
}

/// `time_shift` with an explicit shift; positive shifts move content later.
pub fn shift_by(clip: &AudioClip, shift: i64) -> AudioClip {
    let n = clip.len() as i64;
    let mut out = vec![0.0f32; clip.len()];
    for t in 0..n {
        let src = t - shift;
        if src >= 0 && src < n {
            out[t as usize] = clip.samples()[src as usize];
        }
    }
    AudioClip::new(out, clip.sample_rate()).expect("shift preserves validity")
}

/// With probability `noise_prob`, adds zero-mean white Gaussian noise
/// whose RMS in dBFS is drawn uniformly from the configured range.
pub fn add_white_noise<R: Rng>(clip: &AudioClip, rng: &mut R, cfg: &AugmentConfig) -> AudioClip {
    if rng.random::<f64>() >= cfg.noise_prob {
        return clip.clone();
    }
    let db = rng.random_range(cfg.noise_db_min..=cfg.noise_db_max);
    let rms = 10f64.powf(db / 20.0);
    let samples: Vec<f32> = clip
        .samples()
        .iter()
        .map(|&s| {
            let e: f64 = rng.sample(StandardNormal);
            s + (rms * e) as f32
        })
        .collect();
    AudioClip::new(samples, clip.sample_rate()).expect("noise keeps samples finite")
}

fn mask_span<R: Rng>(rng: &mut R, limit: usize, max_width: usize) -> (usize, usize) {
    let width = rng.random_range(0..=max_width).min(limit);
    let start = if width >= limit {
        0
    } else {
        rng.random_range(0..=limit - width)
    };
    (start, width)
}

/// SpecAugment: zeroes out time spans and channel spans of the feature
/// matrix. Widths are uniform in `[0, max]` and clipped to the matrix.
pub fn spec_augment<R: Rng>(f: &FeatureMatrix, rng: &mut R, cfg: &AugmentConfig) -> FeatureMatrix {
    let mut out = f.clone();
    let (channels, frames) = (f.channels(), f.frames());
    for _ in 0..cfg.specaug_time_masks {
        let (start, width) = mask_span(rng, frames, cfg.specaug_time_width);
        for c in 0..channels {
            for t in start..start + width {
                out.set(c, t, 0.0);
            }
        }
    }
    for _ in 0..cfg.specaug_freq_masks {
        let (start, width) = mask_span(rng, channels, cfg.specaug_freq_width);
        for c in start..start + width {
            for t in 0..frames {
                out.set(c, t, 0.0);
            }
        }
    }
    out
}

/// SpecCutout: zeroes out rectangles in the (channel, time) plane.
pub fn spec_cutout<R: Rng>(f: &FeatureMatrix, rng: &mut R, cfg: &AugmentConfig) -> FeatureMatrix {
    let mut out = f.clone();
    let (channels, frames) = (f.channels(), f.frames());
    for _ in 0..cfg.speccutout_rects {
        let (t0, tw) = mask_span(rng, frames, cfg.specaug_time_width);
        let (c0, ch) = mask_span(rng, channels, cfg.specaug_freq_width);
        for c in c0..c0 + ch {
            for t in t0..t0 + tw {
                out.set(c, t, 0.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp_clip(n: usize) -> AudioClip {
        AudioClip::new((0..n).map(|i| (i as f32) * 1e-4).collect(), SAMPLE_RATE).unwrap()
    }

    #[test]
    fn shift_zero_is_identity() {
        let clip = ramp_clip(500);
        assert_eq!(shift_by(&clip, 0), clip);
    }

    #[test]
    fn shift_positive_pads_front() {
        let clip = ramp_clip(200);
        let shifted = shift_by(&clip, 80);
        assert!(shifted.samples()[..80].iter().all(|&s| s == 0.0));
        assert_eq!(shifted.samples()[80], clip.samples()[0]);
        assert_eq!(shifted.samples()[199], clip.samples()[119]);
        assert_eq!(shifted.len(), clip.len());
    }

    #[test]
    fn shift_negative_pads_back() {
        let clip = ramp_clip(200);
        let shifted = shift_by(&clip, -80);
        assert!(shifted.samples()[120..].iter().all(|&s| s == 0.0));
        assert_eq!(shifted.samples()[0], clip.samples()[80]);
    }

    #[test]
    fn time_shift_stays_in_range_and_reproduces() {
        let clip = ramp_clip(1000);
        let cfg = AugmentConfig::default();
        let a = time_shift(&clip, &mut ChaCha8Rng::seed_from_u64(3), &cfg);
        let b = time_shift(&clip, &mut ChaCha8Rng::seed_from_u64(3), &cfg);
        assert_eq!(a, b);
        assert_eq!(a.len(), clip.len());
    }

    #[test]
    fn noise_skipped_above_probability() {
        let clip = ramp_clip(100);
        let cfg = AugmentConfig {
            noise_prob: 0.0,
            ..AugmentConfig::default()
        };
        let out = add_white_noise(&clip, &mut ChaCha8Rng::seed_from_u64(1), &cfg);
        assert_eq!(out, clip);
    }

    #[test]
    fn noise_rms_tracks_requested_level() {
        let clip = AudioClip::new(vec![0.0; 16000], SAMPLE_RATE).unwrap();
        for (db, seed) in [(-46.0, 5u64), (-90.0, 6)] {
            let cfg = AugmentConfig {
                noise_db_min: db,
                noise_db_max: db,
                noise_prob: 1.0,
                ..AugmentConfig::default()
            };
            let out = add_white_noise(&clip, &mut ChaCha8Rng::seed_from_u64(seed), &cfg);
            let rms = (out
                .samples()
                .iter()
                .map(|&s| f64::from(s) * f64::from(s))
                .sum::<f64>()
                / out.len() as f64)
                .sqrt();
            let target = 10f64.powf(db / 20.0);
            assert!(
                (rms - target).abs() / target < 0.05,
                "db {db}: rms {rms} vs target {target}"
            );
            if db == -90.0 {
                // inaudible: every sample moves less than 1e-3
                assert!(out
                    .samples()
                    .iter()
                    .zip(clip.samples())
                    .all(|(a, b)| (a - b).abs() < 1e-3));
            }
        }
    }

    fn ones(channels: usize, frames: usize) -> FeatureMatrix {
        FeatureMatrix::from_data(channels, frames, vec![1.0; channels * frames])
    }

    #[test]
    fn spec_augment_zero_widths_preserve_input() {
        let f = ones(32, 40);
        let cfg = AugmentConfig {
            specaug_time_width: 0,
            specaug_freq_width: 0,
            ..AugmentConfig::default()
        };
        let out = spec_augment(&f, &mut ChaCha8Rng::seed_from_u64(2), &cfg);
        assert_eq!(out, f);
    }

    #[test]
    fn spec_augment_masked_cells_are_bounded() {
        let f = ones(32, 100);
        let cfg = AugmentConfig::default();
        for seed in 0u64..20 {
            let out = spec_augment(&f, &mut ChaCha8Rng::seed_from_u64(seed), &cfg);
            let zeros = out.data().iter().filter(|&&v| v == 0.0).count();
            let bound = cfg.specaug_time_masks * cfg.specaug_time_width * 32
                + cfg.specaug_freq_masks * cfg.specaug_freq_width * 100;
            assert!(zeros <= bound);
            assert_eq!(out.channels(), 32);
            assert_eq!(out.frames(), 100);
        }
    }

    #[test]
    fn spec_cutout_only_zeroes_cells() {
        let f = ones(32, 60);
        let cfg = AugmentConfig::default();
        for seed in 0u64..20 {
            let out = spec_cutout(&f, &mut ChaCha8Rng::seed_from_u64(seed), &cfg);
            for (a, b) in out.data().iter().zip(f.data()) {
                assert!(*a == *b || *a == 0.0);
            }
        }
    }

    #[test]
    fn augmentation_chain_reproduces_with_fixed_seed() {
        let clip = ramp_clip(10080);
        let cfg = AugmentConfig::default();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = time_shift(&clip, &mut rng, &cfg);
            let c = add_white_noise(&c, &mut rng, &cfg);
            let f = FeatureMatrix::from_data(4, 10, (0..40).map(|i| i as f32).collect());
            let f = spec_augment(&f, &mut rng, &cfg);
            let f = spec_cutout(&f, &mut rng, &cfg);
            (c, f)
        };
        assert_eq!(run(9), run(9));
    }
}
