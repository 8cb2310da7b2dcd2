//! Training loop, run artifacts and the ablation driver.

mod ablation;
mod artifacts;
mod config;
mod trainer;

pub use ablation::{run_ablation, AblationCell, AblationReport, AblationRow, ROW_FAMILIES};
pub use artifacts::{load_trained, CheckpointMeta, SplitIds};
pub use config::{
    SplitSettings, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LR, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE,
};
pub use trainer::{
    optimizer_step, prepare, train, train_prepared, EpochRecord, Prepared, RunRecord, TrainOutcome,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::tensor::checkpoint::CheckpointError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> TrainError {
    let path = path.into();
    move |source| TrainError::Io { path, source }
}
