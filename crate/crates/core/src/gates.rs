//! The gate network and the stochastic-gate machinery.
//!
//! The network maps a normalized 32 x T feature matrix to a same-shape
//! pre-gate map. During training each cell is pushed through
//! `clamp(0.5 + pre + noise, 0, 1)` with Gaussian noise, which relaxes a
//! Bernoulli mask; the expected-L0 term pushes pre-gate values down for
//! background input. At inference the noise is dropped, gates harden to
//! `pre >= 0`, and the mean number of open gates per frame is the
//! segment's voice-activity score.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::compute::layers::{ActKind, SepConvSpec};
use crate::compute::{
    ComputeError, Mode, Parameter, PointwiseConv1d, Scalar, SepConvBlock, Tensor,
};
use crate::dsp::FeatureMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateModelConfig {
    pub channels: usize,
    pub kernel_widths: [usize; 3],
    pub sigma: f64,
}

impl Default for GateModelConfig {
    fn default() -> Self {
        GateModelConfig {
            channels: 32,
            kernel_widths: [13, 15, 17],
            sigma: 0.5,
        }
    }
}

/// Pre-gate map and the binary gates derived from it, for one segment.
#[derive(Clone, Debug)]
pub struct GateOutput {
    pub pre: FeatureMatrix,
    pub gates: FeatureMatrix,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// ---------------------------------------------------------------------------
// Gate network
// ---------------------------------------------------------------------------

/// Three residual separable blocks with tanh, then a 1x1 head that
/// produces the pre-gate map. 7,968 trainable values at the default
/// 32-channel configuration.
pub struct GateNet<F> {
    pub cfg: GateModelConfig,
    block1: SepConvBlock<F>,
    block2: SepConvBlock<F>,
    block3: SepConvBlock<F>,
    pub head: PointwiseConv1d<F>,
}

impl<F: Scalar> GateNet<F> {
    pub fn new<R: Rng>(cfg: GateModelConfig, rng: &mut R) -> Self {
        let c = cfg.channels;
        let block = |i: usize, kernel: usize, skip: bool, rng: &mut R| {
            SepConvBlock::new(
                &format!("gate/block{i}"),
                &SepConvSpec {
                    in_channels: c,
                    out_channels: c,
                    kernel: Some(kernel),
                    dilation: 1,
                    with_skip: skip,
                    act: ActKind::Tanh,
                },
                rng,
            )
        };
        let block1 = block(1, cfg.kernel_widths[0], false, rng);
        let block2 = block(2, cfg.kernel_widths[1], true, rng);
        let block3 = block(3, cfg.kernel_widths[2], true, rng);
        let head = PointwiseConv1d::new("gate/head", c, c, rng);
        GateNet {
            cfg,
            block1,
            block2,
            block3,
            head,
        }
    }

    /// Convenience constructor seeding its own RNG.
    pub fn seeded(cfg: GateModelConfig, seed: u64) -> Self {
        Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Train-mode forward: `[B, C, T] -> [B, C, T]` pre-gate values.
    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>, ComputeError> {
        let h = self.block1.forward(x, mode)?;
        let h = self.block2.forward(&h, mode)?;
        let h = self.block3.forward(&h, mode)?;
        self.head.forward(&h, mode)
    }

    /// Eval-mode forward usable from shared references.
    pub fn infer(&self, x: &Tensor<F>) -> Result<Tensor<F>, ComputeError> {
        let h = self.block1.infer(x)?;
        let h = self.block2.infer(&h)?;
        let h = self.block3.infer(&h)?;
        self.head.infer(&h)
    }

    pub fn backward(&mut self, d_pre: &Tensor<F>) -> Tensor<F> {
        let dh = self.head.backward(d_pre);
        let dh = self.block3.backward(&dh);
        let dh = self.block2.backward(&dh);
        self.block1.backward(&dh)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = self.block1.params_mut();
        out.extend(self.block2.params_mut());
        out.extend(self.block3.params_mut());
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut out = self.block1.params();
        out.extend(self.block2.params());
        out.extend(self.block3.params());
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = self.block1.buffers_mut();
        out.extend(self.block2.buffers_mut());
        out.extend(self.block3.buffers_mut());
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = self.block1.buffers();
        out.extend(self.block2.buffers());
        out.extend(self.block3.buffers());
        out
    }

    /// Trainable value count (running statistics excluded).
    pub fn count_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Pre-gate map and hard gates for one segment, eval mode.
    pub fn gate_output(&self, features: &FeatureMatrix) -> Result<GateOutput, ComputeError> {
        let x = feature_tensor::<F>(features);
        let pre = self.infer(&x)?;
        let gates = deterministic_gates(&pre);
        Ok(GateOutput {
            pre: tensor_features(&pre),
            gates: tensor_features(&gates),
        })
    }
}

/// `[1, C, T]` tensor view of a feature matrix.
pub fn feature_tensor<F: Scalar>(f: &FeatureMatrix) -> Tensor<F> {
    let data = f.data().iter().map(|&v| F::from_f64(f64::from(v))).collect();
    Tensor::from_vec(&[1, f.channels(), f.frames()], data).unwrap()
}

/// Feature-matrix view of a `[1, C, T]` (or `[C, T]`) tensor.
pub fn tensor_features<F: Scalar>(t: &Tensor<F>) -> FeatureMatrix {
    let (c, frames) = match t.rank() {
        3 => (t.dim(1), t.dim(2)),
        2 => (t.dim(0), t.dim(1)),
        r => panic!("expected rank 2 or 3 tensor, got rank {r}"),
    };
    let data = t.data().iter().map(|&v| v.as_f64() as f32).collect();
    FeatureMatrix::from_data(c, frames, data)
}

// ---------------------------------------------------------------------------
// Gate sampling and scoring
// ---------------------------------------------------------------------------

/// Sampled gates plus the straight-through mask (1 where the clamp was
/// not saturated, 0 elsewhere) used to route gradients back to the
/// pre-gate map.
#[derive(Clone, Debug)]
pub struct GateSample<F> {
    pub gates: Tensor<F>,
    pub pass_through: Tensor<F>,
}

/// `clamp(0.5 + pre + noise, 0, 1)` with the given noise tensor.
pub fn gate_values<F: Scalar>(pre: &Tensor<F>, noise: &Tensor<F>) -> GateSample<F> {
    debug_assert!(pre.same_shape(noise));
    let half = F::from_f64(0.5);
    let mut gates = Tensor::zeros(pre.shape());
    let mut pass = Tensor::zeros(pre.shape());
    for i in 0..pre.len() {
        let raw = half + pre.data()[i] + noise.data()[i];
        let (g, p) = if raw <= F::zero() {
            (F::zero(), F::zero())
        } else if raw >= F::one() {
            (F::one(), F::zero())
        } else {
            (raw, F::one())
        };
        gates.data_mut()[i] = g;
        pass.data_mut()[i] = p;
    }
    GateSample {
        gates,
        pass_through: pass,
    }
}

/// Training-time gates: i.i.d. `N(0, sigma^2)` noise per cell.
pub fn sample_gates<F: Scalar, R: Rng>(pre: &Tensor<F>, rng: &mut R, sigma: f64) -> GateSample<F> {
    let mut noise = Tensor::zeros(pre.shape());
    for v in noise.data_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v = F::from_f64(e * sigma);
    }
    gate_values(pre, &noise)
}

/// Inference gates: noise dropped, `pre >= 0` opens the gate.
pub fn deterministic_gates<F: Scalar>(pre: &Tensor<F>) -> Tensor<F> {
    pre.map(|v| if v >= F::zero() { F::one() } else { F::zero() })
}

/// Expected fraction of open gates, `mean Phi((0.5 + pre) / sigma)`.
///
/// This is the differentiable surrogate for the L0 norm of the gate
/// vector, normalized by the cell count so variable-length segments are
/// comparable.
pub fn expected_l0<F: Scalar>(pre: &Tensor<F>, sigma: f64) -> F {
    let sum: f64 = pre
        .data()
        .iter()
        .map(|&v| normal_cdf((0.5 + v.as_f64()) / sigma))
        .sum();
    F::from_f64(sum / pre.len() as f64)
}

/// Analytic gradient of [`expected_l0`] with respect to the pre-gate map.
pub fn expected_l0_grad<F: Scalar>(pre: &Tensor<F>, sigma: f64) -> Tensor<F> {
    let n = pre.len() as f64;
    pre.map(|v| F::from_f64(normal_pdf((0.5 + v.as_f64()) / sigma) / (sigma * n)))
}

/// Elementwise product of features and gates.
pub fn apply_gates<F: Scalar>(x: &Tensor<F>, gates: &Tensor<F>) -> Result<Tensor<F>, ComputeError> {
    if !x.same_shape(gates) {
        return Err(ComputeError::ShapeMismatch {
            context: "apply_gates",
            expected: x.shape().to_vec(),
            got: gates.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        out.data_mut()[i] = x.data()[i] * gates.data()[i];
    }
    Ok(out)
}

/// Segment score: mean over time of the per-frame open-gate count.
/// Bounded by the channel count (32 at the default configuration).
pub fn vad_score(gates: &FeatureMatrix) -> f64 {
    let total: f64 = gates.data().iter().map(|&v| f64::from(v)).sum();
    total / gates.frames() as f64
}
