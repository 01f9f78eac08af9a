//! Training configuration and its `key = value` file format.

use crate::compute::SgdConfig;
use crate::dsp::AugmentConfig;
use crate::util::fnv1a64;

use super::TrainError;

/// Which terms the training loop optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Cross-entropy plus the gate regularizer on background samples.
    Full,
    /// Gate network alone, mean squared error on the normalized score.
    Regression,
    /// Cross-entropy only.
    NoLsg,
    /// Cross-entropy plus the gate regularizer on every sample.
    UnconditionalLsg,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self, TrainError> {
        match s {
            "full" => Ok(TrainMode::Full),
            "regression" => Ok(TrainMode::Regression),
            "no_lsg" => Ok(TrainMode::NoLsg),
            "unconditional_lsg" => Ok(TrainMode::UnconditionalLsg),
            other => Err(TrainError::Config(format!(
                "unknown mode '{other}' (expected full|regression|no_lsg|unconditional_lsg)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Full => "full",
            TrainMode::Regression => "regression",
            TrainMode::NoLsg => "no_lsg",
            TrainMode::UnconditionalLsg => "unconditional_lsg",
        }
    }

    pub fn uses_classifier(&self) -> bool {
        !matches!(self, TrainMode::Regression)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub warmup_ratio: f64,
    pub hold_ratio: f64,
    pub max_lr: f64,
    pub min_lr: f64,
    pub decay_power: f64,
    pub augment: AugmentConfig,
    pub mode: TrainMode,
    pub seed: u64,
    /// Background clips are split into chunks of at most this length.
    pub max_background_s: f64,
    /// Training features are cropped or zero-padded to this length.
    pub crop_s: f64,
    pub n_classes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 128,
            sgd: SgdConfig::default(),
            warmup_ratio: 0.05,
            hold_ratio: 0.45,
            max_lr: 1e-2,
            min_lr: 1e-4,
            decay_power: 2.0,
            augment: AugmentConfig::default(),
            mode: TrainMode::Full,
            seed: 0,
            max_background_s: 0.63,
            crop_s: 0.63,
            n_classes: 36,
        }
    }
}

impl TrainConfig {
    /// Canonical `key = value` rendering; also the hashing input, so the
    /// key order here is part of the checkpoint contract.
    pub fn to_config_string(&self) -> String {
        let a = &self.augment;
        format!(
            "epochs = {}\n\
             batch_size = {}\n\
             momentum = {}\n\
             weight_decay = {}\n\
             warmup_ratio = {}\n\
             hold_ratio = {}\n\
             max_lr = {}\n\
             min_lr = {}\n\
             decay_power = {}\n\
             mode = {}\n\
             seed = {}\n\
             max_background_s = {}\n\
             crop_s = {}\n\
             n_classes = {}\n\
             time_shift_ms = {}\n\
             noise_db_min = {}\n\
             noise_db_max = {}\n\
             noise_prob = {}\n\
             specaug_time_masks = {}\n\
             specaug_time_width = {}\n\
             specaug_freq_masks = {}\n\
             specaug_freq_width = {}\n\
             speccutout_rects = {}\n",
            self.epochs,
            self.batch_size,
            self.sgd.momentum,
            self.sgd.weight_decay,
            self.warmup_ratio,
            self.hold_ratio,
            self.max_lr,
            self.min_lr,
            self.decay_power,
            self.mode.as_str(),
            self.seed,
            self.max_background_s,
            self.crop_s,
            self.n_classes,
            a.time_shift_ms,
            a.noise_db_min,
            a.noise_db_max,
            a.noise_prob,
            a.specaug_time_masks,
            a.specaug_time_width,
            a.specaug_freq_masks,
            a.specaug_freq_width,
            a.speccutout_rects,
        )
    }

    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.to_config_string().as_bytes())
    }
}

/// Parses the `key = value` config format. Every key must be a
/// `TrainConfig` field; unknown keys are rejected. Blank lines and
/// `#` comments are allowed.
pub fn parse_config(text: &str) -> Result<TrainConfig, TrainError> {
    let mut cfg = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            TrainError::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| {
            TrainError::Config(format!("line {}: bad {what} value '{value}'", lineno + 1))
        };
        match key {
            "epochs" => cfg.epochs = value.parse().map_err(|_| bad("integer"))?,
            "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("integer"))?,
            "momentum" => cfg.sgd.momentum = value.parse().map_err(|_| bad("number"))?,
            "weight_decay" => cfg.sgd.weight_decay = value.parse().map_err(|_| bad("number"))?,
            "warmup_ratio" => cfg.warmup_ratio = value.parse().map_err(|_| bad("number"))?,
            "hold_ratio" => cfg.hold_ratio = value.parse().map_err(|_| bad("number"))?,
            "max_lr" => cfg.max_lr = value.parse().map_err(|_| bad("number"))?,
            "min_lr" => cfg.min_lr = value.parse().map_err(|_| bad("number"))?,
            "decay_power" => cfg.decay_power = value.parse().map_err(|_| bad("number"))?,
            "mode" => cfg.mode = TrainMode::parse(value)?,
            "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
            "max_background_s" => {
                cfg.max_background_s = value.parse().map_err(|_| bad("number"))?
            }
            "crop_s" => cfg.crop_s = value.parse().map_err(|_| bad("number"))?,
            "n_classes" => cfg.n_classes = value.parse().map_err(|_| bad("integer"))?,
            "time_shift_ms" => {
                cfg.augment.time_shift_ms = value.parse().map_err(|_| bad("number"))?
            }
            "noise_db_min" => cfg.augment.noise_db_min = value.parse().map_err(|_| bad("number"))?,
            "noise_db_max" => cfg.augment.noise_db_max = value.parse().map_err(|_| bad("number"))?,
            "noise_prob" => cfg.augment.noise_prob = value.parse().map_err(|_| bad("number"))?,
            "specaug_time_masks" => {
                cfg.augment.specaug_time_masks = value.parse().map_err(|_| bad("integer"))?
            }
            "specaug_time_width" => {
                cfg.augment.specaug_time_width = value.parse().map_err(|_| bad("integer"))?
            }
            "specaug_freq_masks" => {
                cfg.augment.specaug_freq_masks = value.parse().map_err(|_| bad("integer"))?
            }
            "specaug_freq_width" => {
                cfg.augment.specaug_freq_width = value.parse().map_err(|_| bad("integer"))?
            }
            "speccutout_rects" => {
                cfg.augment.speccutout_rects = value.parse().map_err(|_| bad("integer"))?
            }
            other => {
                return Err(TrainError::Config(format!(
                    "line {}: unknown key '{other}'",
                    lineno + 1
                )))
            }
        }
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &TrainConfig) -> Result<(), TrainError> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(TrainError::Config("epochs and batch_size must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.sgd.momentum) {
        return Err(TrainError::Config("momentum must be in [0, 1)".into()));
    }
    if cfg.sgd.weight_decay < 0.0 {
        return Err(TrainError::Config("weight_decay must be non-negative".into()));
    }
    if cfg.warmup_ratio < 0.0 || cfg.hold_ratio < 0.0 || cfg.warmup_ratio + cfg.hold_ratio > 1.0 {
        return Err(TrainError::Config("warmup/hold ratios out of range".into()));
    }
    if cfg.min_lr > cfg.max_lr {
        return Err(TrainError::Config("min_lr exceeds max_lr".into()));
    }
    if cfg.n_classes < 2 {
        return Err(TrainError::Config("need at least 2 classes".into()));
    }
    if !(0.0..=1.0).contains(&cfg.augment.noise_prob) {
        return Err(TrainError::Config("noise_prob must be in [0, 1]".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_config_string() {
        let mut cfg = TrainConfig::default();
        cfg.epochs = 30;
        cfg.batch_size = 32;
        cfg.mode = TrainMode::UnconditionalLsg;
        cfg.n_classes = 6;
        cfg.seed = 42;
        let text = cfg.to_config_string();
        let parsed = parse_config(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.config_hash(), cfg.config_hash());
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = parse_config("epochs = 3\nbogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn rejects_bad_values_and_ranges() {
        assert!(parse_config("epochs = zero\n").is_err());
        assert!(parse_config("momentum = 1.5\n").is_err());
        assert!(parse_config("mode = sideways\n").is_err());
        assert!(parse_config("warmup_ratio = 0.9\nhold_ratio = 0.9\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_allowed() {
        let cfg = parse_config("# toy setup\n\nepochs = 5\n").unwrap();
        assert_eq!(cfg.epochs, 5);
    }

    #[test]
    fn hash_changes_with_any_field() {
        let base = TrainConfig::default();
        let mut other = base;
        other.seed = 1;
        assert_ne!(base.config_hash(), other.config_hash());
    }
}
