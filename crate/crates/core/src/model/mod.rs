//! Architecture factory for the SISO/MISO/SIMO/MIMO family, with standard
//! or deformable convolutions.

mod config;
mod network;

use thiserror::Error;

pub use config::{enumerate_ablation, ConvKind, EncoderConfig, Fusion, Input, ModelConfig, DEFAULT_HEAD_HIDDEN};
pub use network::{
    offset_groups_for, BnUpdate, ForwardOutput, Model, ModelInput, OffsetRecord, FIRST_LAYER_OFFSET_GROUPS,
    OFFSET_GROUPS,
};

use crate::tensor::checkpoint::CheckpointError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid model input: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint does not fit the model: missing {missing:?}, unexpected {unexpected:?}, wrong shape {mismatched:?}")]
    WeightMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
        mismatched: Vec<String>,
    },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
