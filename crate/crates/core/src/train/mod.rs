//! Dataset ingestion, batching, the joint training loop, validation and
//! checkpointing.

pub mod batch;
pub mod checkpointing;
pub mod config;
pub mod manifest;
pub mod trainer;

pub use batch::{make_batch, Batch};
pub use config::{parse_config, TrainConfig, TrainMode};
pub use manifest::{expand_dataset, load_manifest, split_background, DatasetItem, ManifestEntry};
pub use trainer::{train_run, train_step_loss, LossParts, Trainer, ValStats};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("manifest error in {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("non-finite loss {value} at step {step}; diagnostic written")]
    NonFiniteLoss { step: usize, value: f64 },
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Compute(#[from] crate::compute::ComputeError),
    #[error(transparent)]
    Checkpoint(#[from] crate::compute::checkpoint::CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
