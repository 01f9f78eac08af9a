//! Synthetic toy corpus.
//!
//! "Speech" classes are harmonic tone complexes with class-specific
//! fundamentals, a few harmonics and slow amplitude modulation; the
//! background class mixes white noise, pink noise and tone-free
//! modulated noise. Clips are 0.5 to 1.0 seconds at 16 kHz. The corpus
//! is a stand-in for real command/noise data at a scale where an
//! end-to-end training run takes minutes on a CPU.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::{write_wav, SAMPLE_RATE};
use crate::infer::{write_segments_csv, SegmentRecord};
use crate::util::mix_seed;

use super::EvalError;

#[derive(Clone, Copy, Debug)]
pub struct ToyCorpusSpec {
    pub seed: u64,
    pub n_per_class: usize,
    pub n_speech_classes: usize,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        ToyCorpusSpec {
            seed: 0,
            n_per_class: 200,
            n_speech_classes: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub root: PathBuf,
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub test_segments: PathBuf,
    pub label_map: PathBuf,
    pub train_config: PathBuf,
    pub n_classes: usize,
}

/// Class fundamental in Hz, log-spaced over 120..300.
pub fn class_fundamental(class: usize, n_speech_classes: usize) -> f64 {
    let k = (class - 1) as f64;
    let span = (n_speech_classes.max(2) - 1) as f64;
    120.0 * (300.0f64 / 120.0).powf(k / span)
}

fn label_string(class: usize) -> String {
    if class == 0 {
        "background".into()
    } else {
        format!("speech_{class}")
    }
}

/// Harmonic tone complex with amplitude modulation and a touch of noise.
fn synth_speech(rng: &mut ChaCha8Rng, f0_nominal: f64, n_harmonics: usize, n: usize) -> Vec<f32> {
    let f0 = f0_nominal + rng.random_range(-0.3..0.3);
    let am_rate = rng.random_range(4.0..8.0);
    let am_phase = rng.random_range(0.0..2.0 * PI);
    let am_depth = 0.5;
    let phases: Vec<f64> = (0..n_harmonics)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let level = rng.random_range(0.15..0.5);
    let sr = f64::from(SAMPLE_RATE);

    let mut wave = vec![0.0f64; n];
    for (i, w) in wave.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let mut v = 0.0;
        for (h, &phase) in phases.iter().enumerate() {
            let k = (h + 1) as f64;
            v += (2.0 * PI * k * f0 * t + phase).sin() / k;
        }
        let env = 1.0 - am_depth / 2.0 + (am_depth / 2.0) * (2.0 * PI * am_rate * t + am_phase).sin();
        *w = v * env;
    }
    let peak = wave.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-9);
    let noise_amp = 10f64.powf(-50.0 / 20.0);
    wave.iter()
        .map(|&v| {
            let e: f64 = rng.sample(StandardNormal);
            ((v / peak) * level + e * noise_amp) as f32
        })
        .collect()
}

/// Background: white, pink, or slow-modulated white noise, tone-free.
fn synth_background(rng: &mut ChaCha8Rng, variant: usize, n: usize) -> Vec<f32> {
    let level_db = rng.random_range(-28.0..-12.0);
    let rms_target = 10f64.powf(level_db / 20.0);
    let sr = f64::from(SAMPLE_RATE);
    let mut wave = vec![0.0f64; n];
    match variant % 3 {
        0 => {
            for w in wave.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *w = e;
            }
        }
        1 => {
            // Kellet's economy pink-noise filter over white noise
            let (mut b0, mut b1, mut b2) = (0.0f64, 0.0, 0.0);
            for w in wave.iter_mut() {
                let white: f64 = rng.sample(StandardNormal);
                b0 = 0.99765 * b0 + white * 0.0990460;
                b1 = 0.96300 * b1 + white * 0.2965164;
                b2 = 0.57000 * b2 + white * 1.0526913;
                *w = b0 + b1 + b2 + white * 0.1848;
            }
        }
        _ => {
            let am_rate = rng.random_range(4.0..8.0);
            let am_phase = rng.random_range(0.0..2.0 * PI);
            for (i, w) in wave.iter_mut().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                let t = i as f64 / sr;
                let env = 0.6 + 0.4 * (2.0 * PI * am_rate * t + am_phase).sin();
                *w = e * env;
            }
        }
    }
    let rms = (wave.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-9);
    wave.iter().map(|&v| (v / rms * rms_target) as f32).collect()
}

/// Generates the corpus under `out_dir`: WAV files, train/val/test
/// manifests (70/15/15 per class), a segments CSV over the test split, a
/// label mapping file, and a ready-to-run training config.
pub fn make_toy_corpus(out_dir: &Path, spec: &ToyCorpusSpec) -> Result<ToyCorpus, EvalError> {
    assert!(spec.n_speech_classes >= 2, "need at least two speech classes");
    assert!(spec.n_per_class >= 3, "need at least three clips per class");
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir)?;

    let n_classes = spec.n_speech_classes + 1;
    let mut manifests: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut test_segments: Vec<SegmentRecord> = Vec::new();

    for class in 0..n_classes {
        let n_val = (spec.n_per_class * 15) / 100;
        let n_test = n_val;
        let n_train = spec.n_per_class - n_val - n_test;
        for idx in 0..spec.n_per_class {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, class as u64, idx as u64]));
            let duration = rng.random_range(0.5..1.0);
            let n = (duration * f64::from(SAMPLE_RATE)).round() as usize;
            let samples = if class == 0 {
                synth_background(&mut rng, idx, n)
            } else {
                let f0 = class_fundamental(class, spec.n_speech_classes);
                let harmonics = 4 + (class - 1) % 5;
                synth_speech(&mut rng, f0, harmonics, n)
            };
            let name = format!("c{class}_{idx:04}.wav");
            write_wav(&wav_dir.join(&name), &samples, SAMPLE_RATE)?;

            let duration_s = n as f64 / f64::from(SAMPLE_RATE);
            let line = format!("wav/{name}\t{class}\t{duration_s:.6}");
            let split = if idx < n_train {
                0
            } else if idx < n_train + n_val {
                1
            } else {
                2
            };
            manifests[split].push(line);
            if split == 2 {
                test_segments.push(SegmentRecord {
                    audio_path: format!("wav/{name}"),
                    start_s: 0.0,
                    end_s: duration_s,
                    label: label_string(class),
                });
            }
        }
    }

    let train_manifest = out_dir.join("train.tsv");
    let val_manifest = out_dir.join("val.tsv");
    let test_manifest = out_dir.join("test.tsv");
    for (path, lines) in [
        (&train_manifest, &manifests[0]),
        (&val_manifest, &manifests[1]),
        (&test_manifest, &manifests[2]),
    ] {
        std::fs::write(path, lines.join("\n") + "\n")?;
    }

    let test_segments_path = out_dir.join("test_segments.csv");
    write_segments_csv(&test_segments_path, &test_segments)
        .map_err(|e| EvalError::Io(std::io::Error::other(e.to_string())))?;

    let label_map = out_dir.join("label_map.tsv");
    let mut map_lines = vec!["background\tneg".to_string()];
    for class in 1..n_classes {
        map_lines.push(format!("{}\tpos", label_string(class)));
    }
    std::fs::write(&label_map, map_lines.join("\n") + "\n")?;

    // training config sized for the toy corpus
    let train_config = out_dir.join("train.conf");
    let cfg = crate::train::TrainConfig {
        epochs: 30,
        batch_size: 32,
        n_classes,
        seed: spec.seed,
        ..crate::train::TrainConfig::default()
    };
    std::fs::write(&train_config, cfg.to_config_string())?;

    Ok(ToyCorpus {
        root: out_dir.to_path_buf(),
        train_manifest,
        val_manifest,
        test_manifest,
        test_segments: test_segments_path,
        label_map,
        train_config,
        n_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::load_wav;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;
    use tempfile::tempdir;

    fn small_spec() -> ToyCorpusSpec {
        ToyCorpusSpec {
            seed: 11,
            n_per_class: 10,
            n_speech_classes: 3,
        }
    }

    #[test]
    fn corpus_layout_and_labels() {
        let dir = tempdir().unwrap();
        let corpus = make_toy_corpus(dir.path(), &small_spec()).unwrap();
        assert_eq!(corpus.n_classes, 4);
        // 10 per class split 8/1/1
        let train = std::fs::read_to_string(&corpus.train_manifest).unwrap();
        assert_eq!(train.lines().count(), 8 * 4);
        let val = std::fs::read_to_string(&corpus.val_manifest).unwrap();
        assert_eq!(val.lines().count(), 4);
        let map = std::fs::read_to_string(&corpus.label_map).unwrap();
        assert!(map.contains("background\tneg"));
        assert!(map.contains("speech_3\tpos"));
        // labels: background 0, speech 1..n
        for line in train.lines() {
            let label: usize = line.split('\t').nth(1).unwrap().parse().unwrap();
            assert!(label < 4);
        }
        // the ready-made config parses and matches the corpus
        let cfg =
            crate::train::parse_config(&std::fs::read_to_string(&corpus.train_config).unwrap())
                .unwrap();
        assert_eq!(cfg.n_classes, 4);
        assert_eq!(cfg.seed, 11);
    }

    #[test]
    fn generation_is_byte_identical_for_a_seed() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let a = make_toy_corpus(dir_a.path(), &small_spec()).unwrap();
        let b = make_toy_corpus(dir_b.path(), &small_spec()).unwrap();
        for name in ["c0_0000.wav", "c1_0003.wav", "c3_0009.wav"] {
            let xa = std::fs::read(a.root.join("wav").join(name)).unwrap();
            let xb = std::fs::read(b.root.join("wav").join(name)).unwrap();
            assert_eq!(xa, xb, "{name} differs");
        }
        assert_eq!(
            std::fs::read(&a.train_manifest).unwrap(),
            std::fs::read(&b.train_manifest).unwrap()
        );

        // a different seed must change the audio
        let dir_c = tempdir().unwrap();
        let c = make_toy_corpus(
            dir_c.path(),
            &ToyCorpusSpec {
                seed: 12,
                ..small_spec()
            },
        )
        .unwrap();
        assert_ne!(
            std::fs::read(a.root.join("wav/c1_0000.wav")).unwrap(),
            std::fs::read(c.root.join("wav/c1_0000.wav")).unwrap()
        );
    }

    #[test]
    fn speech_clips_show_harmonic_peaks() {
        let dir = tempdir().unwrap();
        let corpus = make_toy_corpus(dir.path(), &small_spec()).unwrap();
        for class in 1..=3usize {
            let clip = load_wav(&corpus.root.join(format!("wav/c{class}_0000.wav"))).unwrap();
            let n = clip.len();
            let mut buf: Vec<Complex<f64>> = clip
                .samples()
                .iter()
                .map(|&s| Complex::new(f64::from(s), 0.0))
                .collect();
            FftPlanner::new().plan_fft_forward(n).process(&mut buf);
            let bin_hz = 16000.0 / n as f64;
            let f0 = class_fundamental(class, 3);
            for k in 1..=3usize {
                let target = k as f64 * f0;
                let lo = ((target - 10.0) / bin_hz).floor() as usize;
                let hi = ((target + 10.0) / bin_hz).ceil() as usize;
                let peak_bin = (lo..=hi)
                    .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
                    .unwrap();
                let peak_hz = peak_bin as f64 * bin_hz;
                assert!(
                    (peak_hz - target).abs() <= 2.0 + bin_hz / 2.0,
                    "class {class} harmonic {k}: peak {peak_hz:.1} Hz vs {target:.1} Hz"
                );
            }
        }
    }

    #[test]
    fn background_clips_are_tone_free_near_speech_fundamentals() {
        // spectral flatness proxy: no background bin in the speech f0
        // band dominates its neighborhood the way a harmonic does
        let dir = tempdir().unwrap();
        let corpus = make_toy_corpus(dir.path(), &small_spec()).unwrap();
        let clip = load_wav(&corpus.root.join("wav/c0_0000.wav")).unwrap();
        let n = clip.len();
        let mut buf: Vec<Complex<f64>> = clip
            .samples()
            .iter()
            .map(|&s| Complex::new(f64::from(s), 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let bin_hz = 16000.0 / n as f64;
        let lo = (100.0 / bin_hz) as usize;
        let hi = (350.0 / bin_hz) as usize;
        let mags: Vec<f64> = (lo..hi).map(|i| buf[i].norm()).collect();
        let mean = mags.iter().sum::<f64>() / mags.len() as f64;
        let max = mags.iter().fold(0.0f64, |m, &v| m.max(v));
        assert!(max / mean < 12.0, "background has a tonal spike: {}", max / mean);
    }
}
