//! Batch assembly: augment, extract, normalize, collate to a fixed grid.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::compute::Tensor;
use crate::dsp::{
    add_white_noise, load_wav, normalize_features, spec_augment, spec_cutout, time_shift,
    FeatureMatrix, MfccExtractor, FEATURE_CHANNELS,
};

use super::{DatasetItem, TrainConfig, TrainError};

/// A collated training batch: `[B, 32, crop_frames]` features.
pub struct Batch {
    pub features: Tensor<f32>,
    pub labels: Vec<usize>,
}

/// Frames on the training grid for a crop length in seconds.
pub fn crop_frames(extractor: &MfccExtractor, crop_s: f64) -> usize {
    let samples = (crop_s * 16000.0).floor() as usize;
    extractor
        .frame_count(samples)
        .expect("crop window must cover one frame")
}

/// One item's feature column stack: waveform augmentations, MFCC,
/// per-segment normalization, spectrogram augmentations, then a random
/// crop or right zero-padding to the fixed frame grid.
fn prepare_item(
    item: &DatasetItem,
    cfg: &TrainConfig,
    extractor: &MfccExtractor,
    frames: usize,
    seed: u64,
) -> Result<FeatureMatrix, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip = load_wav(&item.audio_path)?;
    let clip = clip.slice(item.start, item.end)?;
    let clip = time_shift(&clip, &mut rng, &cfg.augment);
    let clip = add_white_noise(&clip, &mut rng, &cfg.augment);
    let f = extractor.compute(&clip)?;
    let f = normalize_features(&f);
    let f = spec_augment(&f, &mut rng, &cfg.augment);
    let f = spec_cutout(&f, &mut rng, &cfg.augment);

    let mut out = FeatureMatrix::zeros(f.channels(), frames);
    if f.frames() >= frames {
        let start = if f.frames() == frames {
            0
        } else {
            rng.random_range(0..=f.frames() - frames)
        };
        for c in 0..f.channels() {
            for t in 0..frames {
                out.set(c, t, f.get(c, start + t));
            }
        }
    } else {
        for c in 0..f.channels() {
            for t in 0..f.frames() {
                out.set(c, t, f.get(c, t));
            }
        }
    }
    Ok(out)
}

/// Builds a batch from dataset items with one derived RNG stream per
/// item, so assembly can run in parallel without changing results.
pub fn make_batch(
    items: &[&DatasetItem],
    item_seeds: &[u64],
    cfg: &TrainConfig,
    extractor: &MfccExtractor,
) -> Result<Batch, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    assert_eq!(items.len(), item_seeds.len());
    let frames = crop_frames(extractor, cfg.crop_s);
    let prepared: Vec<Result<FeatureMatrix, TrainError>> = items
        .par_iter()
        .zip(item_seeds.par_iter())
        .map(|(item, &seed)| prepare_item(item, cfg, extractor, frames, seed))
        .collect();

    let b = items.len();
    let mut features = Tensor::<f32>::zeros(&[b, FEATURE_CHANNELS, frames]);
    let mut labels = Vec::with_capacity(b);
    for (i, prep) in prepared.into_iter().enumerate() {
        let f = prep?;
        let offset = features.idx3(i, 0, 0);
        features.data_mut()[offset..offset + FEATURE_CHANNELS * frames]
            .copy_from_slice(f.data());
        labels.push(items[i].label);
    }
    Ok(Batch { features, labels })
}
