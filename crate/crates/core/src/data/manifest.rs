use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{crop, io_err, read_depth_png, read_rgb_png, CropWindow, DataError, Result, Sample, TraitVector};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// One plant's entry. Image paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub variety: String,
    pub traits: TraitVector,
}

/// Dataset index: samples keyed by id (iteration order is id order), the
/// cultivar list, and the fixed held-out test ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub varieties: Vec<String>,
    #[serde(default)]
    pub test_ids: Vec<String>,
    pub samples: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|source| DataError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(io_err(path))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(DataError::SchemaVersion {
                found: self.schema_version,
                expected: MANIFEST_SCHEMA_VERSION,
            });
        }
        if self.samples.is_empty() {
            return Err(DataError::Empty);
        }
        let varieties: BTreeSet<&str> = self.varieties.iter().map(String::as_str).collect();
        for (id, entry) in &self.samples {
            let invalid = |reason: String| DataError::InvalidSample {
                id: id.clone(),
                reason,
            };
            entry.traits.validate().map_err(invalid)?;
            if !varieties.contains(entry.variety.as_str()) {
                return Err(invalid(format!("unknown variety {:?}", entry.variety)));
            }
        }
        for id in &self.test_ids {
            if !self.samples.contains_key(id) {
                return Err(DataError::UnknownTestId(id.clone()));
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.keys().cloned().collect()
    }
}

/// How to crop images on load.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropSetting {
    /// The default camera window when the image contains it, else the whole
    /// image.
    #[default]
    Auto,
    None,
    Window(CropWindow),
}

impl CropSetting {
    fn resolve(&self, height: usize, width: usize) -> Option<CropWindow> {
        match *self {
            CropSetting::None => None,
            CropSetting::Window(w) => Some(w),
            CropSetting::Auto => {
                let w = CropWindow::default();
                (w.y1 <= height && w.x1 <= width).then_some(w)
            }
        }
    }

    /// Crops `sample` according to this setting.
    pub fn apply(&self, sample: Sample) -> Result<Sample> {
        match self.resolve(sample.height(), sample.width()) {
            Some(window) => crop(&sample, window),
            None => Ok(sample),
        }
    }
}

/// All samples of a manifest, loaded and cropped, in manifest id order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>, crop_setting: CropSetting) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = Manifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let samples = manifest
            .samples
            .iter()
            .map(|(id, entry)| {
                let rgb = read_rgb_png(root.join(&entry.rgb))?;
                let depth = read_depth_png(root.join(&entry.depth))?;
                let sample = Sample::new(id.clone(), rgb, depth, entry.traits, entry.variety.clone())?;
                crop_setting.apply(sample)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, samples })
    }

    /// Resolves a dataset argument that may name either the manifest file or
    /// the directory containing `manifest.json`.
    pub fn manifest_path(path: impl AsRef<Path>) -> PathBuf {
        let path = path.as_ref();
        if path.is_dir() {
            path.join("manifest.json")
        } else {
            path.to_path_buf()
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(variety: &str) -> ManifestEntry {
        ManifestEntry {
            rgb: "rgb/a.png".into(),
            depth: "depth/a.png".into(),
            variety: variety.into(),
            traits: TraitVector {
                fresh_weight: 2.0,
                dry_weight: 0.2,
                height: 3.0,
                diameter: 4.0,
                leaf_area: 5.0,
            },
        }
    }

    fn manifest() -> Manifest {
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            varieties: vec!["Satine".into()],
            test_ids: vec!["b".into()],
            samples: [("a".to_string(), entry("Satine")), ("b".to_string(), entry("Satine"))].into(),
        }
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        manifest().save(&path).unwrap();
        assert_eq!(Manifest::load(&path).unwrap(), manifest());
    }

    #[test]
    fn validation_errors() {
        let mut m = manifest();
        m.schema_version = 7;
        assert!(matches!(m.validate(), Err(DataError::SchemaVersion { found: 7, .. })));

        let mut m = manifest();
        m.test_ids.push("zzz".into());
        assert!(matches!(m.validate(), Err(DataError::UnknownTestId(id)) if id == "zzz"));

        let mut m = manifest();
        m.samples.insert("c".into(), entry("Lugano"));
        assert!(matches!(m.validate(), Err(DataError::InvalidSample { .. })));

        let mut m = manifest();
        m.samples.get_mut("a").unwrap().traits.dry_weight = 9.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn auto_crop_only_applies_to_large_frames() {
        assert_eq!(CropSetting::Auto.resolve(64, 64), None);
        assert_eq!(CropSetting::Auto.resolve(1080, 1920), Some(CropWindow::default()));
        assert_eq!(CropSetting::None.resolve(1080, 1920), None);
    }
}
