//! Auxiliary multi-class classifier.
//!
//! A compact separable-convolution classifier (3 residual blocks of 64
//! channels, a dilated separable epilogue to 128 channels, average
//! pooling over time, affine head). It consumes gated features during
//! training to shape the gate network and is discarded at inference.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compute::layers::{ActKind, SepConvSpec};
use crate::compute::{
    ComputeError, GlobalAvgPool, Linear, Mode, Parameter, Scalar, SepConvBlock, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub blocks: usize,
    pub channels: usize,
    pub kernel_widths: [usize; 3],
    pub epilogue_kernel: usize,
    pub epilogue_dilation: usize,
    pub epilogue_channels: usize,
    /// Speech classes plus the background class, which is always index 0.
    pub n_classes: usize,
}

pub const BACKGROUND_CLASS: usize = 0;

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            in_channels: 32,
            blocks: 3,
            channels: 64,
            kernel_widths: [13, 15, 17],
            epilogue_kernel: 29,
            epilogue_dilation: 2,
            epilogue_channels: 128,
            n_classes: 36,
        }
    }
}

impl ClassifierConfig {
    pub fn with_classes(n_classes: usize) -> Self {
        ClassifierConfig {
            n_classes,
            ..ClassifierConfig::default()
        }
    }
}

pub struct ClassifierNet<F> {
    pub cfg: ClassifierConfig,
    blocks: Vec<SepConvBlock<F>>,
    epilogue1: SepConvBlock<F>,
    epilogue2: SepConvBlock<F>,
    pool: GlobalAvgPool,
    head: Linear<F>,
}

impl<F: Scalar> ClassifierNet<F> {
    pub fn new<R: Rng>(cfg: ClassifierConfig, rng: &mut R) -> Self {
        assert!(cfg.n_classes >= 2, "need at least two classes");
        let mut blocks = Vec::with_capacity(cfg.blocks);
        let mut in_ch = cfg.in_channels;
        for i in 0..cfg.blocks {
            let kernel = cfg.kernel_widths[i.min(cfg.kernel_widths.len() - 1)];
            blocks.push(SepConvBlock::new(
                &format!("classifier/block{}", i + 1),
                &SepConvSpec {
                    in_channels: in_ch,
                    out_channels: cfg.channels,
                    kernel: Some(kernel),
                    dilation: 1,
                    with_skip: true,
                    act: ActKind::Relu,
                },
                rng,
            ));
            in_ch = cfg.channels;
        }
        let epilogue1 = SepConvBlock::new(
            "classifier/epilogue1",
            &SepConvSpec {
                in_channels: cfg.channels,
                out_channels: cfg.epilogue_channels,
                kernel: Some(cfg.epilogue_kernel),
                dilation: cfg.epilogue_dilation,
                with_skip: false,
                act: ActKind::Relu,
            },
            rng,
        );
        let epilogue2 = SepConvBlock::new(
            "classifier/epilogue2",
            &SepConvSpec {
                in_channels: cfg.epilogue_channels,
                out_channels: cfg.epilogue_channels,
                kernel: None,
                dilation: 1,
                with_skip: false,
                act: ActKind::Relu,
            },
            rng,
        );
        let head = Linear::new("classifier/head", cfg.epilogue_channels, cfg.n_classes, rng);
        ClassifierNet {
            cfg,
            blocks,
            epilogue1,
            epilogue2,
            pool: GlobalAvgPool::new(),
            head,
        }
    }

    pub fn seeded(cfg: ClassifierConfig, seed: u64) -> Self {
        Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// `[B, 32, T] -> [B, n_classes]` logits; length-independent thanks
    /// to the average pooling.
    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>, ComputeError> {
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        let h = self.epilogue1.forward(&h, mode)?;
        let h = self.epilogue2.forward(&h, mode)?;
        let pooled = self.pool.forward(&h, mode);
        self.head.forward(&pooled, mode)
    }

    pub fn infer(&self, x: &Tensor<F>) -> Result<Tensor<F>, ComputeError> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.infer(&h)?;
        }
        let h = self.epilogue1.infer(&h)?;
        let h = self.epilogue2.infer(&h)?;
        let pooled = self.pool.infer(&h);
        self.head.infer(&pooled)
    }

    /// Gradient w.r.t. the gated input features.
    pub fn backward(&mut self, d_logits: &Tensor<F>) -> Tensor<F> {
        let dp = self.head.backward(d_logits);
        let dh = self.pool.backward(&dp);
        let dh = self.epilogue2.backward(&dh);
        let mut dh = self.epilogue1.backward(&dh);
        for b in self.blocks.iter_mut().rev() {
            dh = b.backward(&dh);
        }
        dh
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.epilogue1.params_mut());
        out.extend(self.epilogue2.params_mut());
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.epilogue1.params());
        out.extend(self.epilogue2.params());
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.buffers_mut());
        }
        out.extend(self.epilogue1.buffers_mut());
        out.extend(self.epilogue2.buffers_mut());
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.buffers());
        }
        out.extend(self.epilogue1.buffers());
        out.extend(self.epilogue2.buffers());
        out
    }

    pub fn count_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Exact trainable-value count for a configuration, by enumeration.
pub fn count_params(cfg: &ClassifierConfig) -> usize {
    ClassifierNet::<f32>::seeded(*cfg, 0).count_params()
}
