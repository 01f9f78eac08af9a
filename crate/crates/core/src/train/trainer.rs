//! The joint training loop.
//!
//! Every random stream (weight init, epoch shuffles, per-item
//! augmentations, gate noise) is derived from the config seed and the
//! step position, so runs are reproducible, batch assembly can be
//! parallel, and a resumed run continues bit-exactly.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::classifier::{ClassifierConfig, ClassifierNet, BACKGROUND_CLASS};
use crate::compute::checkpoint::TensorEntry;
use crate::compute::{
    lr_at, sgd_step, softmax_cross_entropy_batch, LrSchedule, Mode, Scalar, Tensor,
};
use crate::dsp::{load_wav, normalize_features, MfccConfig, MfccExtractor, SAMPLE_RATE};
use crate::gates::{
    apply_gates, deterministic_gates, feature_tensor, gate_values, normal_cdf, normal_pdf,
    GateModelConfig, GateNet,
};
use crate::util::mix_seed;

use super::checkpointing;
use super::{expand_dataset, load_manifest, make_batch, DatasetItem, ManifestEntry, TrainConfig,
    TrainError, TrainMode};

// stream tags for derived RNGs
const TAG_GATE_INIT: u64 = 1;
const TAG_CLS_INIT: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_ITEM: u64 = 4;
const TAG_NOISE: u64 = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub lsg: f64,
    pub mse: f64,
}

/// Gaussian gate noise with a derived seed; shape-stable and
/// reproducible across runs.
pub fn gate_noise<F: Scalar>(shape: &[usize], sigma: f64, seed: u64) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v = F::from_f64(e * sigma);
    }
    t
}

/// Loss forward (and optionally backward) for one batch under a given
/// training mode and a fixed gate-noise tensor.
///
/// Batch combination: per-sample sum of terms, mean over the batch. The
/// gate regularizer weighs in for background samples only (full mode),
/// for every sample (unconditional mode), or not at all. Regression mode
/// has no classifier and minimizes the squared error between the
/// normalized continuous gate score and the speech indicator.
pub fn train_step_loss<F: Scalar>(
    gate: &mut GateNet<F>,
    mut classifier: Option<&mut ClassifierNet<F>>,
    features: &Tensor<F>,
    labels: &[usize],
    mode: TrainMode,
    noise: &Tensor<F>,
    do_backward: bool,
) -> Result<LossParts, TrainError> {
    let (b_n, c_n, t_n) = (features.dim(0), features.dim(1), features.dim(2));
    assert_eq!(b_n, labels.len());
    let cells = (c_n * t_n) as f64;
    let sigma = gate.cfg.sigma;

    let pre = gate.forward(features, Mode::Train)?;
    let sample = gate_values(&pre, noise);

    if mode == TrainMode::Regression {
        if classifier.is_some() {
            return Err(TrainError::ModeMismatch(
                "regression mode is trained without the classifier".into(),
            ));
        }
        let mut total = 0.0;
        let mut d_pre = Tensor::<F>::zeros(pre.shape());
        for b in 0..b_n {
            let o = sample.gates.idx3(b, 0, 0);
            let row = &sample.gates.data()[o..o + c_n * t_n];
            let s: f64 = row.iter().map(|&v| v.as_f64()).sum::<f64>() / cells;
            let target = if labels[b] == BACKGROUND_CLASS { 0.0 } else { 1.0 };
            let diff = s - target;
            total += diff * diff;
            if do_backward {
                let g = F::from_f64(2.0 * diff / (b_n as f64 * cells));
                for i in o..o + c_n * t_n {
                    d_pre.data_mut()[i] = sample.pass_through.data()[i] * g;
                }
            }
        }
        total /= b_n as f64;
        if do_backward {
            gate.backward(&d_pre);
        }
        return Ok(LossParts {
            total,
            mse: total,
            ..LossParts::default()
        });
    }

    let cls = classifier.as_deref_mut().ok_or_else(|| {
        TrainError::ModeMismatch("classifier modes need the classifier attached".into())
    })?;

    let x_gated = apply_gates(features, &sample.gates)?;
    let logits = cls.forward(&x_gated, Mode::Train)?;
    let (ce_losses, ce_grads) = softmax_cross_entropy_batch(&logits, labels)?;

    // per-sample gate-regularizer weight
    let weight = |label: usize| -> f64 {
        match mode {
            TrainMode::Full => {
                if label == BACKGROUND_CLASS {
                    1.0
                } else {
                    0.0
                }
            }
            TrainMode::UnconditionalLsg => 1.0,
            TrainMode::NoLsg => 0.0,
            TrainMode::Regression => unreachable!(),
        }
    };

    let mut ce_sum = 0.0;
    let mut lsg_sum = 0.0;
    for b in 0..b_n {
        ce_sum += ce_losses[b].as_f64();
        let w = weight(labels[b]);
        if w > 0.0 {
            let o = pre.idx3(b, 0, 0);
            let l0: f64 = pre.data()[o..o + c_n * t_n]
                .iter()
                .map(|&v| normal_cdf((0.5 + v.as_f64()) / sigma))
                .sum::<f64>()
                / cells;
            lsg_sum += w * l0;
        }
    }
    let ce = ce_sum / b_n as f64;
    let lsg = lsg_sum / b_n as f64;
    let total = ce + lsg;

    if do_backward {
        let mut d_logits = ce_grads;
        d_logits.scale(F::from_f64(1.0 / b_n as f64));
        let d_gated = cls.backward(&d_logits);

        // gradient into the pre-gate map: classifier path through the
        // straight-through mask, plus the analytic regularizer term
        let mut d_pre = Tensor::<F>::zeros(pre.shape());
        for i in 0..d_pre.len() {
            d_pre.data_mut()[i] =
                sample.pass_through.data()[i] * features.data()[i] * d_gated.data()[i];
        }
        for b in 0..b_n {
            let w = weight(labels[b]);
            if w > 0.0 {
                let o = pre.idx3(b, 0, 0);
                let scale = w / (b_n as f64 * cells * sigma);
                for i in o..o + c_n * t_n {
                    let p = normal_pdf((0.5 + pre.data()[i].as_f64()) / sigma);
                    d_pre.data_mut()[i] += F::from_f64(p * scale);
                }
            }
        }
        gate.backward(&d_pre);
    }

    Ok(LossParts {
        total,
        ce,
        lsg,
        ..LossParts::default()
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValStats {
    pub accuracy: f64,
    pub bg_gate_rate: f64,
    pub speech_gate_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub final_val: ValStats,
    pub steps_run: usize,
    pub checkpoint: PathBuf,
    pub export: PathBuf,
    pub metrics: PathBuf,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub gate: GateNet<f32>,
    pub classifier: Option<ClassifierNet<f32>>,
    items: Vec<DatasetItem>,
    val: Vec<ManifestEntry>,
    extractor: MfccExtractor,
    sched: LrSchedule,
    pub step: usize,
}

impl Trainer {
    pub fn new(
        cfg: TrainConfig,
        train_manifest: &Path,
        val_manifest: &Path,
    ) -> Result<Self, TrainError> {
        let train_entries = load_manifest(train_manifest)?;
        let val = load_manifest(val_manifest)?;
        for e in &val {
            if e.label >= cfg.n_classes {
                return Err(TrainError::LabelOutOfRange {
                    label: e.label,
                    n_classes: cfg.n_classes,
                });
            }
        }
        let items = expand_dataset(&train_entries, cfg.max_background_s, cfg.n_classes)?;
        let extractor = MfccExtractor::new(MfccConfig::default(), SAMPLE_RATE)?;

        let steps_per_epoch = items.len().div_ceil(cfg.batch_size);
        let sched = LrSchedule {
            total_steps: cfg.epochs * steps_per_epoch,
            warmup_ratio: cfg.warmup_ratio,
            hold_ratio: cfg.hold_ratio,
            max_lr: cfg.max_lr,
            min_lr: cfg.min_lr,
            decay_power: cfg.decay_power,
        };

        let gate = GateNet::new(
            GateModelConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, TAG_GATE_INIT])),
        );
        let classifier = cfg.mode.uses_classifier().then(|| {
            ClassifierNet::new(
                ClassifierConfig::with_classes(cfg.n_classes),
                &mut ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, TAG_CLS_INIT])),
            )
        });

        Ok(Trainer {
            cfg,
            gate,
            classifier,
            items,
            val,
            extractor,
            sched,
            step: 0,
        })
    }

    /// Restores a full training checkpoint and continues from its step.
    pub fn resume(
        cfg: TrainConfig,
        train_manifest: &Path,
        val_manifest: &Path,
        checkpoint: &Path,
    ) -> Result<Self, TrainError> {
        let mut t = Self::new(cfg, train_manifest, val_manifest)?;
        t.step = checkpointing::load_training(
            checkpoint,
            &mut t.gate,
            t.classifier.as_mut(),
            cfg.config_hash(),
        )?;
        Ok(t)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.items.len().div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.sched.total_steps
    }

    pub fn n_train_items(&self) -> usize {
        self.items.len()
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        checkpointing::save_training(
            path,
            &self.gate,
            self.classifier.as_ref(),
            self.step,
            self.cfg.config_hash(),
        )?;
        Ok(())
    }

    /// Runs one optimization step and returns its loss parts.
    pub fn step_once(&mut self) -> Result<LossParts, TrainError> {
        let spe = self.steps_per_epoch();
        let epoch = self.step / spe;
        let batch_idx = self.step % spe;

        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[
            self.cfg.seed,
            TAG_SHUFFLE,
            epoch as u64,
        ])));
        let lo = batch_idx * self.cfg.batch_size;
        let hi = (lo + self.cfg.batch_size).min(self.items.len());
        let batch_items: Vec<&DatasetItem> = order[lo..hi].iter().map(|&i| &self.items[i]).collect();
        let item_seeds: Vec<u64> = (lo..hi)
            .map(|pos| mix_seed(&[self.cfg.seed, TAG_ITEM, epoch as u64, pos as u64]))
            .collect();

        let batch = make_batch(&batch_items, &item_seeds, &self.cfg, &self.extractor)?;
        let noise = gate_noise::<f32>(
            batch.features.shape(),
            self.gate.cfg.sigma,
            mix_seed(&[self.cfg.seed, TAG_NOISE, self.step as u64]),
        );

        let parts = train_step_loss(
            &mut self.gate,
            self.classifier.as_mut(),
            &batch.features,
            &batch.labels,
            self.cfg.mode,
            &noise,
            true,
        )?;
        if !parts.total.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: self.step,
                value: parts.total,
            });
        }

        let lr = lr_at(self.step, &self.sched);
        let mut params = self.gate.params_mut();
        if let Some(c) = self.classifier.as_mut() {
            params.extend(c.params_mut());
        }
        sgd_step(&mut params, lr, &self.cfg.sgd);
        self.step += 1;
        Ok(parts)
    }

    /// Per-clip evaluation pass over the validation manifest.
    ///
    /// Accuracy is classifier accuracy on hard-gated features, except in
    /// regression mode where it is speech/non-speech accuracy of the
    /// thresholded score. Gate rates are the fraction of open hard gates
    /// averaged per group.
    pub fn validate(&self) -> Result<ValStats, TrainError> {
        validate_on(&self.gate, self.classifier.as_ref(), &self.extractor, &self.val)
    }

    /// Trains until the schedule ends, evaluating after each epoch and
    /// keeping the checkpoint with the best validation accuracy.
    pub fn run(&mut self, out: &Path, metrics_path: &Path) -> Result<TrainSummary, TrainError> {
        let spe = self.steps_per_epoch();
        let total = self.total_steps();
        let fresh = self.step == 0;
        let mut metrics = std::fs::OpenOptions::new()
            .create(true)
            .truncate(fresh)
            .append(!fresh)
            .write(true)
            .open(metrics_path)?;
        if fresh {
            writeln!(
                metrics,
                "epoch,step,lr,train_loss,val_acc,bg_gate_rate,speech_gate_rate"
            )?;
        }

        let mut best: Option<(f64, usize, Vec<TensorEntry>, Vec<TensorEntry>)> = None;
        let mut epoch_loss_sum = 0.0;
        let mut epoch_loss_count = 0usize;
        let mut last_val = ValStats {
            accuracy: 0.0,
            bg_gate_rate: 0.0,
            speech_gate_rate: 0.0,
        };

        while self.step < total {
            match self.step_once() {
                Ok(parts) => {
                    epoch_loss_sum += parts.total;
                    epoch_loss_count += 1;
                }
                Err(TrainError::NonFiniteLoss { step, value }) => {
                    let diag = metrics_path.with_extension("diagnostic.txt");
                    let _ = std::fs::write(
                        &diag,
                        format!(
                            "non-finite loss {value} at step {step}\nconfig:\n{}",
                            self.cfg.to_config_string()
                        ),
                    );
                    return Err(TrainError::NonFiniteLoss { step, value });
                }
                Err(e) => return Err(e),
            }

            if self.step % spe == 0 {
                let epoch = self.step / spe; // 1-based at epoch end
                let val = self.validate()?;
                last_val = val;
                let mean_loss = epoch_loss_sum / epoch_loss_count.max(1) as f64;
                writeln!(
                    metrics,
                    "{},{},{:.8},{:.6},{:.6},{:.6},{:.6}",
                    epoch,
                    self.step,
                    lr_at(self.step - 1, &self.sched),
                    mean_loss,
                    val.accuracy,
                    val.bg_gate_rate,
                    val.speech_gate_rate
                )?;
                epoch_loss_sum = 0.0;
                epoch_loss_count = 0;

                let better = match &best {
                    None => true,
                    Some((acc, _, _, _)) => val.accuracy > *acc,
                };
                if better {
                    best = Some((
                        val.accuracy,
                        epoch,
                        checkpointing::training_entries(
                            &self.gate,
                            self.classifier.as_ref(),
                            self.step,
                            self.cfg.config_hash(),
                        ),
                        checkpointing::export_entries(&self.gate),
                    ));
                }
            }
        }
        metrics.flush()?;

        let (best_acc, best_epoch, full_entries, export_entries) =
            best.ok_or(TrainError::EmptyBatch)?;
        crate::compute::checkpoint::save(out, &full_entries)?;
        let export = PathBuf::from(format!("{}.infer", out.display()));
        crate::compute::checkpoint::save(&export, &export_entries)?;

        Ok(TrainSummary {
            best_epoch,
            best_val_accuracy: best_acc,
            final_val: last_val,
            steps_run: total,
            checkpoint: out.to_path_buf(),
            export,
            metrics: metrics_path.to_path_buf(),
        })
    }
}

/// Validation statistics for a network pair over a manifest.
pub fn validate_on(
    gate: &GateNet<f32>,
    classifier: Option<&ClassifierNet<f32>>,
    extractor: &MfccExtractor,
    entries: &[ManifestEntry],
) -> Result<ValStats, TrainError> {
    struct PerClip {
        correct: bool,
        open_rate: f64,
        background: bool,
    }
    let per_clip: Vec<Result<PerClip, TrainError>> = entries
        .par_iter()
        .map(|e| {
            let clip = load_wav(&e.audio_path)?;
            let features = normalize_features(&extractor.compute(&clip)?);
            let x = feature_tensor::<f32>(&features);
            let pre = gate.infer(&x)?;
            let gates = deterministic_gates(&pre);
            let open_rate = gates.data().iter().map(|&v| f64::from(v)).sum::<f64>()
                / gates.len() as f64;
            let correct = match classifier {
                Some(cls) => {
                    let gated = apply_gates(&x, &gates)?;
                    let logits = cls.infer(&gated)?;
                    let pred = logits
                        .data()
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    pred == e.label
                }
                None => {
                    // thresholded score: open half the gates = speech
                    let speech = open_rate >= 0.5;
                    speech == (e.label != BACKGROUND_CLASS)
                }
            };
            Ok(PerClip {
                correct,
                open_rate,
                background: e.label == BACKGROUND_CLASS,
            })
        })
        .collect();

    let mut correct = 0usize;
    let mut bg = (0.0, 0usize);
    let mut speech = (0.0, 0usize);
    for r in per_clip {
        let r = r?;
        if r.correct {
            correct += 1;
        }
        if r.background {
            bg.0 += r.open_rate;
            bg.1 += 1;
        } else {
            speech.0 += r.open_rate;
            speech.1 += 1;
        }
    }
    Ok(ValStats {
        accuracy: correct as f64 / entries.len().max(1) as f64,
        bg_gate_rate: bg.0 / bg.1.max(1) as f64,
        speech_gate_rate: speech.0 / speech.1.max(1) as f64,
    })
}

/// End-to-end training: build a trainer, run the schedule, write the
/// best checkpoint, the gate-only export and the metrics log.
pub fn train_run(
    cfg: TrainConfig,
    train_manifest: &Path,
    val_manifest: &Path,
    out: &Path,
    metrics: &Path,
) -> Result<TrainSummary, TrainError> {
    Trainer::new(cfg, train_manifest, val_manifest)?.run(out, metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{make_toy_corpus, ToyCorpus, ToyCorpusSpec};
    use tempfile::{tempdir, TempDir};

    fn tiny_corpus() -> (TempDir, ToyCorpus) {
        let dir = tempdir().unwrap();
        let corpus = make_toy_corpus(
            dir.path(),
            &ToyCorpusSpec {
                seed: 5,
                n_per_class: 8,
                n_speech_classes: 2,
            },
        )
        .unwrap();
        (dir, corpus)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            n_classes: 3,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    fn random_batch(seed: u64, b: usize, t: usize) -> (Tensor<f64>, Vec<usize>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..b * 32 * t).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let features = Tensor::from_vec(&[b, 32, t], data).unwrap();
        let labels: Vec<usize> = (0..b).map(|i| i % 3).collect();
        let noise = gate_noise::<f64>(&[b, 32, t], 0.5, seed ^ 0xbeef);
        (features, labels, noise)
    }

    #[test]
    fn joint_loss_gradients_match_finite_differences() {
        use crate::compute::gradcheck::{central_diff_grad, max_rel_err_floor};
        use crate::classifier::{ClassifierConfig, ClassifierNet};

        let (features, labels, noise) = random_batch(21, 2, 9);
        for mode in [TrainMode::Full, TrainMode::UnconditionalLsg, TrainMode::NoLsg] {
            let mut gate = GateNet::<f64>::seeded(GateModelConfig::default(), 31);
            let mut cls = ClassifierNet::<f64>::seeded(ClassifierConfig::with_classes(3), 32);
            for p in gate.params_mut().into_iter().chain(cls.params_mut()) {
                p.zero_grad();
            }
            train_step_loss(&mut gate, Some(&mut cls), &features, &labels, mode, &noise, true)
                .unwrap();

            // a few coordinates of a few tensors from both networks
            for (net_name, pi, idx) in [
                ("gate", 0usize, 7usize),
                ("gate", 1, 100),
                ("gate", 16, 3),
                ("cls", 0, 50),
                ("cls", 20, 11),
            ] {
                let analytic = if net_name == "gate" {
                    gate.params()[pi].grad.data()[idx]
                } else {
                    cls.params()[pi].grad.data()[idx]
                };
                let p0 = if net_name == "gate" {
                    gate.params()[pi].value.data()[idx]
                } else {
                    cls.params()[pi].value.data()[idx]
                };
                let num = central_diff_grad(&[p0], 1e-5, |v| {
                    if net_name == "gate" {
                        gate.params_mut()[pi].value.data_mut()[idx] = v[0];
                    } else {
                        cls.params_mut()[pi].value.data_mut()[idx] = v[0];
                    }
                    train_step_loss(
                        &mut gate,
                        Some(&mut cls),
                        &features,
                        &labels,
                        mode,
                        &noise,
                        false,
                    )
                    .unwrap()
                    .total
                });
                if net_name == "gate" {
                    gate.params_mut()[pi].value.data_mut()[idx] = p0;
                } else {
                    cls.params_mut()[pi].value.data_mut()[idx] = p0;
                }
                let err = max_rel_err_floor(&[analytic], &num, 1e-3);
                assert!(err < 1e-4, "{mode:?} {net_name} param {pi}[{idx}]: rel err {err}");
            }
        }
    }

    #[test]
    fn regression_loss_gradients_match_finite_differences() {
        use crate::compute::gradcheck::{central_diff_grad, max_rel_err_floor};
        let (features, labels, noise) = random_batch(22, 2, 9);
        let mut gate = GateNet::<f64>::seeded(GateModelConfig::default(), 33);
        for p in gate.params_mut() {
            p.zero_grad();
        }
        train_step_loss(&mut gate, None, &features, &labels, TrainMode::Regression, &noise, true)
            .unwrap();
        for (pi, idx) in [(0usize, 3usize), (5, 40), (16, 20)] {
            let analytic = gate.params()[pi].grad.data()[idx];
            let p0 = gate.params()[pi].value.data()[idx];
            let num = central_diff_grad(&[p0], 1e-5, |v| {
                gate.params_mut()[pi].value.data_mut()[idx] = v[0];
                train_step_loss(
                    &mut gate,
                    None,
                    &features,
                    &labels,
                    TrainMode::Regression,
                    &noise,
                    false,
                )
                .unwrap()
                .total
            });
            gate.params_mut()[pi].value.data_mut()[idx] = p0;
            let err = max_rel_err_floor(&[analytic], &num, 1e-3);
            assert!(err < 1e-4, "regression param {pi}[{idx}]: rel err {err}");
        }
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let (features, labels, noise) = random_batch(23, 2, 9);
        let mut gate = GateNet::<f64>::seeded(GateModelConfig::default(), 1);
        let mut cls = crate::classifier::ClassifierNet::<f64>::seeded(
            crate::classifier::ClassifierConfig::with_classes(3),
            2,
        );
        // regression with a classifier attached
        let r = train_step_loss(
            &mut gate,
            Some(&mut cls),
            &features,
            &labels,
            TrainMode::Regression,
            &noise,
            false,
        );
        assert!(matches!(r, Err(TrainError::ModeMismatch(_))));
        // classifier mode without a classifier
        let r = train_step_loss(&mut gate, None, &features, &labels, TrainMode::Full, &noise, false);
        assert!(matches!(r, Err(TrainError::ModeMismatch(_))));
    }

    #[test]
    fn speech_only_batch_gets_no_regularizer_gradient() {
        // with no background samples, full mode must equal no_lsg exactly
        let (features, _, noise) = random_batch(24, 3, 9);
        let labels = vec![1usize, 2, 1];
        let mut run = |mode: TrainMode| {
            let mut gate = GateNet::<f64>::seeded(GateModelConfig::default(), 44);
            let mut cls = crate::classifier::ClassifierNet::<f64>::seeded(
                crate::classifier::ClassifierConfig::with_classes(3),
                45,
            );
            let parts = train_step_loss(
                &mut gate,
                Some(&mut cls),
                &features,
                &labels,
                mode,
                &noise,
                true,
            )
            .unwrap();
            let grads: Vec<Vec<f64>> = gate
                .params()
                .iter()
                .map(|p| p.grad.data().to_vec())
                .collect();
            (parts, grads)
        };
        let (full_parts, full_grads) = run(TrainMode::Full);
        let (nolsg_parts, nolsg_grads) = run(TrainMode::NoLsg);
        assert_eq!(full_parts.lsg, 0.0);
        assert_eq!(full_parts.total, nolsg_parts.total);
        assert_eq!(full_grads, nolsg_grads);

        // sanity: with a background sample present the gradients differ
        let labels_bg = vec![0usize, 2, 1];
        let mut gate = GateNet::<f64>::seeded(GateModelConfig::default(), 44);
        let mut cls = crate::classifier::ClassifierNet::<f64>::seeded(
            crate::classifier::ClassifierConfig::with_classes(3),
            45,
        );
        let parts = train_step_loss(
            &mut gate,
            Some(&mut cls),
            &features,
            &labels_bg,
            TrainMode::Full,
            &noise,
            true,
        )
        .unwrap();
        assert!(parts.lsg > 0.0);
    }

    #[test]
    fn fixed_seed_reproduces_loss_trajectory() {
        let (_dir, corpus) = tiny_corpus();
        let cfg = tiny_config();
        let run = || -> Vec<f64> {
            let mut t = Trainer::new(cfg, &corpus.train_manifest, &corpus.val_manifest).unwrap();
            (0..5).map(|_| t.step_once().unwrap().total).collect()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn save_load_continue_is_bitwise_identical() {
        let (_dir, corpus) = tiny_corpus();
        let cfg = tiny_config();
        let ckpt_dir = tempdir().unwrap();
        let ckpt = ckpt_dir.path().join("mid.ckpt");

        // uninterrupted: 5 steps
        let mut a = Trainer::new(cfg, &corpus.train_manifest, &corpus.val_manifest).unwrap();
        for _ in 0..5 {
            a.step_once().unwrap();
        }

        // interrupted: 3 steps, save, resume, 2 steps
        let mut b = Trainer::new(cfg, &corpus.train_manifest, &corpus.val_manifest).unwrap();
        for _ in 0..3 {
            b.step_once().unwrap();
        }
        b.save(&ckpt).unwrap();
        let mut c =
            Trainer::resume(cfg, &corpus.train_manifest, &corpus.val_manifest, &ckpt).unwrap();
        assert_eq!(c.step, 3);
        for _ in 0..2 {
            c.step_once().unwrap();
        }

        for (pa, pc) in a.gate.params().iter().zip(c.gate.params().iter()) {
            assert_eq!(pa.value, pc.value, "gate {} diverged", pa.name);
            assert_eq!(pa.momentum, pc.momentum);
        }
        let (ca, cc) = (a.classifier.as_ref().unwrap(), c.classifier.as_ref().unwrap());
        for (pa, pc) in ca.params().iter().zip(cc.params().iter()) {
            assert_eq!(pa.value, pc.value, "classifier {} diverged", pa.name);
        }
        for ((na, ba), (_, bc)) in a.gate.buffers().iter().zip(c.gate.buffers().iter()) {
            assert_eq!(ba, bc, "buffer {na} diverged");
        }
    }

    #[test]
    fn run_writes_metrics_checkpoint_and_export() {
        let (_dir, corpus) = tiny_corpus();
        let cfg = tiny_config();
        let out_dir = tempdir().unwrap();
        let out = out_dir.path().join("model.ckpt");
        let metrics = out_dir.path().join("metrics.csv");
        let summary = train_run(cfg, &corpus.train_manifest, &corpus.val_manifest, &out, &metrics)
            .unwrap();
        assert!(out.exists());
        assert!(out_dir.path().join("model.ckpt.infer").exists());
        let log = std::fs::read_to_string(&metrics).unwrap();
        let mut lines = log.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,step,lr,train_loss,val_acc,bg_gate_rate,speech_gate_rate"
        );
        assert_eq!(lines.count(), cfg.epochs); // one line per epoch
        assert!(summary.best_val_accuracy >= 0.0);

        // the checkpoint loads back as a scorer
        let scorer = crate::infer::Scorer::from_checkpoint(&out).unwrap();
        assert_eq!(scorer.gate_net().count_params(), 7968);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let (_dir, corpus) = tiny_corpus();
        let cfg = tiny_config();
        let out_dir = tempdir().unwrap();
        let mut t = Trainer::new(cfg, &corpus.train_manifest, &corpus.val_manifest).unwrap();
        t.gate.params_mut()[0].value.fill(f32::NAN);
        let out = out_dir.path().join("x.ckpt");
        let metrics = out_dir.path().join("m.csv");
        let err = t.run(&out, &metrics).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteLoss { .. }));
        assert!(out_dir.path().join("m.diagnostic.txt").exists());
    }
}
