//! Dataset ingestion and preprocessing: manifest + PNG loading, the crop
//! window, train-only channel normalization, paired RGB/depth augmentation,
//! sampling strategies, splitting, and a synthetic generator whose traits
//! are known in closed form.

mod augment;
mod image_io;
mod manifest;
mod normalize;
mod sample;
mod sampler;
mod split;
pub mod synthetic;
mod traits;

use std::path::PathBuf;

use thiserror::Error;

pub use augment::{augment, AugmentConfig, GeometricTransform};
pub use image_io::{read_depth_png, read_rgb_png, write_depth_png, write_rgb_png};
pub use manifest::{CropSetting, Dataset, Manifest, ManifestEntry, MANIFEST_SCHEMA_VERSION};
pub use normalize::{check_no_leakage, compute_stats, normalize, NormalizationStats, CHANNEL_NAMES};
pub use sample::{crop, CropWindow, Sample, SampleSet};
pub use sampler::{Sampler, SamplerStrategy};
pub use split::{split, Split, SplitSpec, TrainSize};
pub use traits::{Trait, TraitVector};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("unsupported manifest schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("sample {id:?}: {reason}")]
    InvalidSample { id: String, reason: String },
    #[error("crop window y {y0}..{y1}, x {x0}..{x1} does not fit a {height}x{width} image")]
    CropOutOfBounds {
        y0: usize,
        y1: usize,
        x0: usize,
        x1: usize,
        height: usize,
        width: usize,
    },
    #[error("channel {channel} is constant over the training set; cannot normalize")]
    ConstantChannel { channel: &'static str },
    #[error("normalization statistics include held-out sample {id:?}")]
    Leakage { id: String },
    #[error("no samples to draw from")]
    Empty,
    #[error("test id {0:?} is not in the manifest")]
    UnknownTestId(String),
    #[error("train fraction {0} must lie in (0, 1]")]
    InvalidFraction(f64),
    #[error("explicit split counts {train} + {val} do not cover the {available} non-test samples")]
    SplitCounts {
        train: usize,
        val: usize,
        available: usize,
    },
    #[error("validation split would be empty; pass allow_empty_val to permit it")]
    EmptyValidation,
    #[error("invalid sampler configuration: {0}")]
    Sampler(String),
    #[error("invalid synthetic configuration: {0}")]
    Synthetic(String),
    #[error("synthetic blob radius {radius} px is below the minimum {min} px")]
    BlobTooSmall { radius: f64, min: f64 },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}
