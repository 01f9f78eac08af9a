//! Minimal differentiable compute core.
//!
//! Exactly the layer set the two networks need, each with a hand-written
//! reverse-mode backward pass, plus SGD with momentum, the
//! warmup-hold-decay learning-rate schedule and a binary checkpoint
//! format. Everything is generic over [`Scalar`] so training runs in
//! `f32` while gradient checks run in `f64`.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use layers::{
    Activation, BatchNorm1d, DepthwiseConv1d, GlobalAvgPool, Linear, Mode, Parameter,
    PointwiseConv1d, SepConvBlock,
};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_batch};
pub use optim::{lr_at, sgd_step, LrSchedule, SgdConfig};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ComputeError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("bad target class {index} for {classes} classes")]
    BadTarget { index: usize, classes: usize },
}
