//! SGD with momentum and the warmup-hold-decay learning-rate schedule.

use super::layers::Parameter;
use super::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.9,
            weight_decay: 1e-3,
        }
    }
}

/// One SGD-with-momentum update over a parameter set.
///
/// For each parameter: `g = grad (+ wd * value when the parameter opts
/// in); buf = momentum * buf + g; value -= lr * buf`. Gradients are
/// cleared afterwards.
pub fn sgd_step<F: Scalar>(params: &mut [&mut Parameter<F>], lr: f64, cfg: &SgdConfig) {
    let lr = F::from_f64(lr);
    let momentum = F::from_f64(cfg.momentum);
    let wd = F::from_f64(cfg.weight_decay);
    for p in params.iter_mut() {
        let decay = if p.weight_decay { wd } else { F::zero() };
        for i in 0..p.value.len() {
            let g = p.grad.data()[i] + decay * p.value.data()[i];
            let buf = momentum * p.momentum.data()[i] + g;
            p.momentum.data_mut()[i] = buf;
            p.value.data_mut()[i] = p.value.data()[i] - lr * buf;
        }
        p.zero_grad();
    }
}

/// Warmup-hold-decay schedule: linear ramp from zero to `max_lr` over the
/// warmup span, flat hold, then polynomial decay down to `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub total_steps: usize,
    pub warmup_ratio: f64,
    pub hold_ratio: f64,
    pub max_lr: f64,
    pub min_lr: f64,
    pub decay_power: f64,
}

impl LrSchedule {
    pub fn new(total_steps: usize) -> Self {
        LrSchedule {
            total_steps,
            warmup_ratio: 0.05,
            hold_ratio: 0.45,
            max_lr: 1e-2,
            min_lr: 1e-4,
            decay_power: 2.0,
        }
    }
}

/// Learning rate at a global step in `[0, total_steps]`.
pub fn lr_at(step: usize, sched: &LrSchedule) -> f64 {
    let s = step as f64;
    let total = sched.total_steps as f64;
    let warmup_end = sched.warmup_ratio * total;
    let hold_end = (sched.warmup_ratio + sched.hold_ratio) * total;
    if s < warmup_end {
        sched.max_lr * s / warmup_end
    } else if s < hold_end {
        sched.max_lr
    } else {
        let span = (total - hold_end).max(1.0);
        let u = ((s - hold_end) / span).clamp(0.0, 1.0);
        sched.min_lr + (sched.max_lr - sched.min_lr) * (1.0 - u).powf(sched.decay_power)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::Tensor;

    fn scalar_param(value: f64) -> Parameter<f64> {
        Parameter::new("p", Tensor::from_vec(&[1], vec![value]).unwrap(), false)
    }

    #[test]
    fn zero_grad_zero_decay_leaves_value() {
        let mut p = scalar_param(1.25);
        sgd_step(
            &mut [&mut p],
            0.1,
            &SgdConfig {
                momentum: 0.9,
                weight_decay: 0.0,
            },
        );
        assert_eq!(p.value.data()[0], 1.25);
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = scalar_param(1.0);
        p.grad.data_mut()[0] = 1.0;
        sgd_step(
            &mut [&mut p],
            0.1,
            &SgdConfig {
                momentum: 0.0,
                weight_decay: 0.0,
            },
        );
        assert!((p.value.data()[0] - 0.9).abs() < 1e-15);
        // gradient cleared by the step
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn two_momentum_steps_match_hand_trace() {
        // value 1 -> 0.9 -> 0.71 with grad always 1, momentum 0.9, lr 0.1
        let mut p = scalar_param(1.0);
        let cfg = SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
        };
        p.grad.data_mut()[0] = 1.0;
        sgd_step(&mut [&mut p], 0.1, &cfg);
        assert!((p.value.data()[0] - 0.9).abs() < 1e-12);
        p.grad.data_mut()[0] = 1.0;
        sgd_step(&mut [&mut p], 0.1, &cfg);
        assert!((p.value.data()[0] - 0.71).abs() < 1e-12);
    }

    #[test]
    fn lr_zero_is_identity_on_values() {
        let mut p = scalar_param(0.5);
        p.grad.data_mut()[0] = 3.0;
        sgd_step(&mut [&mut p], 0.0, &SgdConfig::default());
        assert_eq!(p.value.data()[0], 0.5);
    }

    #[test]
    fn weight_decay_applies_only_when_opted_in() {
        let mut decayed = Parameter::new("w", Tensor::from_vec(&[1], vec![1.0f64]).unwrap(), true);
        let mut plain = scalar_param(1.0);
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.5,
        };
        sgd_step(&mut [&mut decayed, &mut plain], 1.0, &cfg);
        assert!((decayed.value.data()[0] - 0.5).abs() < 1e-15);
        assert_eq!(plain.value.data()[0], 1.0);
    }

    #[test]
    fn schedule_anchor_values() {
        let sched = LrSchedule::new(1000);
        assert_eq!(lr_at(50, &sched), 1e-2); // end of warmup
        assert_eq!(lr_at(300, &sched), 1e-2); // inside hold
        assert_eq!(lr_at(499, &sched), 1e-2); // last hold step
        assert!((lr_at(1000, &sched) - 1e-4).abs() < 1e-18); // final step
        assert_eq!(lr_at(0, &sched), 0.0); // warmup starts at zero
    }

    #[test]
    fn schedule_is_continuous_at_region_boundaries() {
        let sched = LrSchedule::new(1000);
        let per_step_bound = sched.max_lr / (sched.warmup_ratio * 1000.0);
        for boundary in [50usize, 500] {
            let jump = (lr_at(boundary, &sched) - lr_at(boundary - 1, &sched)).abs();
            assert!(jump <= per_step_bound + 1e-12);
        }
    }
}
