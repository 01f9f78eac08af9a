//! Segment-level voice activity detection built on locally stochastic gates.
//!
//! The toolkit trains a small gate network jointly with an auxiliary
//! multi-class classifier. The gate network learns to zero out feature
//! cells that carry no speech information; at inference the classifier is
//! dropped and the number of open gates per frame is the voice-activity
//! score for a whole segment, so no frame-level postprocessing is needed.
//!
//! Modules:
//! - [`dsp`]: WAV ingestion, MFCC front end, normalization, augmentations.
//! - [`compute`]: minimal differentiable layer set with reverse-mode
//!   gradients, SGD with momentum, and the warmup-hold-decay LR schedule.
//! - [`gates`]: the gate network, stochastic gate sampling, the expected-L0
//!   regularizer, and the segment score.
//! - [`classifier`]: the auxiliary classifier used only during training.
//! - [`train`]: manifests, batching, the joint training loop, checkpoints.
//! - [`infer`]: segment scoring with a frozen gate network.
//! - [`eval`]: AUC-ROC evaluation and a synthetic toy corpus generator.
//! - [`cli`]: the `sgvad` command-line entry point.

pub mod classifier;
pub mod cli;
pub mod compute;
pub mod dsp;
pub mod eval;
pub mod gates;
pub mod infer;
pub mod train;
pub mod util;
