use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Result, TrainError};
use crate::data::{AugmentConfig, CropSetting, SamplerStrategy, TrainSize};
use crate::model::ModelConfig;

pub const DEFAULT_LR: f64 = 5e-4;
pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_MAX_EPOCHS: usize = 300;
pub const DEFAULT_PATIENCE: usize = 30;

/// How the manifest is partitioned.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub train_size: TrainSize,
    /// Held-out ids; `None` uses the manifest's list.
    pub test_ids: Option<Vec<String>>,
}

/// Everything that determines a training run. The output directory is not
/// part of it, so the configuration hash names the experiment, not the
/// location of its artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Constant for the whole run.
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation NMSE before stopping.
    pub patience: usize,
    pub sampler: SamplerStrategy,
    /// Drives the split shuffle, sampling and augmentation.
    pub seed: u64,
    pub augment: AugmentConfig,
    pub split: SplitSettings,
    /// Global gradient-norm cap; off when `None`.
    pub grad_clip: Option<f64>,
    pub eval_batch_size: usize,
    /// How images are cropped when the dataset is loaded. Training itself
    /// receives loaded samples; the setting is recorded so that evaluation
    /// and visualization crop new data the same way.
    pub crop: CropSetting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: DEFAULT_LR,
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            sampler: SamplerStrategy::Random,
            seed: 0,
            augment: AugmentConfig::default(),
            split: SplitSettings::default(),
            grad_clip: None,
            eval_batch_size: 32,
            crop: CropSetting::Auto,
        }
    }
}

/// Independent random streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Stream {
    Sampler = 1,
    Augment = 2,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(TrainError::Config(m));
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return err("batch sizes must be at least 1".into());
        }
        if self.patience > self.max_epochs {
            return err(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return err(format!("grad_clip must be positive, got {c}"));
            }
        }
        self.augment.validate().map_err(TrainError::Config)?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_protocol() {
        let c = TrainConfig::default();
        assert_eq!(c.lr, 5e-4);
        assert_eq!((c.batch_size, c.max_epochs, c.patience), (16, 300, 30));
        assert!(c.grad_clip.is_none());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let bad = [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { patience: 5, max_epochs: 4, ..TrainConfig::default() },
            TrainConfig { grad_clip: Some(-1.0), ..TrainConfig::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        assert_eq!(a.hash(), TrainConfig::default().hash());
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.hash(), TrainConfig { seed: 1, ..a.clone() }.hash());
    }

    #[test]
    fn partial_config_text_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"max_epochs": 5, "patience": 2}"#).unwrap();
        assert_eq!(c.max_epochs, 5);
        assert_eq!(c.lr, DEFAULT_LR);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
    }
}
