//! Synthetic lettuce-like plants with closed-form traits.
//!
//! Each plant is a textured elliptical blob on a dark background with a
//! dome-shaped depth profile. With `s` = [`PIXEL_SIZE_CM`]:
//!
//! * leaf_area = (pixels inside the ellipse) · s²
//! * diameter = major axis length · s
//! * height = dome apex height
//! * fresh_weight = [`FRESH_WEIGHT_PER_CM3`] · leaf_area · height
//! * dry_weight = k₂ · fresh_weight, with k₂ fixed per cultivar
//!
//! Height is drawn independently of size, so weights need both inputs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    io_err, write_depth_png, write_rgb_png, DataError, Manifest, ManifestEntry, Result, Sample, TraitVector,
    MANIFEST_SCHEMA_VERSION,
};
use crate::tensor::Tensor;

/// Ground sampling distance, cm per pixel.
pub const PIXEL_SIZE_CM: f64 = 0.25;
/// k₁ in g/cm³.
pub const FRESH_WEIGHT_PER_CM3: f64 = 0.05;
/// Depth sensor units per cm of canopy height.
pub const DEPTH_UNITS_PER_CM: f64 = 100.0;
/// Smallest semi-axis the generator will render.
pub const MIN_RADIUS_PX: f64 = 3.0;
/// Smallest supported image side.
pub const MIN_IMAGE_SIZE: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cultivar {
    pub name: &'static str,
    pub color: [f64; 3],
    /// k₂: dry matter fraction.
    pub dry_matter: f64,
}

pub const CULTIVARS: [Cultivar; 4] = [
    Cultivar {
        name: "Aphylion",
        color: [72.0, 150.0, 62.0],
        dry_matter: 0.045,
    },
    Cultivar {
        name: "Salanova",
        color: [150.0, 56.0, 66.0],
        dry_matter: 0.06,
    },
    Cultivar {
        name: "Satine",
        color: [136.0, 196.0, 74.0],
        dry_matter: 0.03,
    },
    Cultivar {
        name: "Lugano",
        color: [38.0, 104.0, 48.0],
        dry_matter: 0.08,
    },
];

/// One blob. Angles in radians; lengths in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobParams {
    pub center_y: f64,
    pub center_x: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
    pub height_cm: f64,
    pub cultivar: usize,
}

impl BlobParams {
    pub fn validate(&self) -> Result<()> {
        let r = self.semi_major.min(self.semi_minor);
        if !(r >= MIN_RADIUS_PX) {
            return Err(DataError::BlobTooSmall {
                radius: r,
                min: MIN_RADIUS_PX,
            });
        }
        if self.semi_minor > self.semi_major {
            return Err(DataError::Synthetic("semi_minor exceeds semi_major".into()));
        }
        if !(self.height_cm > 0.0) || self.cultivar >= CULTIVARS.len() {
            return Err(DataError::Synthetic(format!("invalid blob {self:?}")));
        }
        Ok(())
    }

    /// Normalized squared elliptical radius of pixel centre `(y, x)`; the
    /// pixel belongs to the plant iff this is ≤ 1.
    pub fn radius2(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.center_y, x - self.center_x);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2)
    }

    fn polar_angle(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.center_y, x - self.center_x);
        (-dx * s + dy * c).atan2(dx * c + dy * s)
    }

    pub fn traits(&self, pixel_count: usize) -> TraitVector {
        let leaf_area = pixel_count as f64 * PIXEL_SIZE_CM * PIXEL_SIZE_CM;
        let fresh_weight = FRESH_WEIGHT_PER_CM3 * leaf_area * self.height_cm;
        TraitVector {
            fresh_weight,
            dry_weight: CULTIVARS[self.cultivar].dry_matter * fresh_weight,
            height: self.height_cm,
            diameter: 2.0 * self.semi_major * PIXEL_SIZE_CM,
            leaf_area,
        }
    }

    /// Renders a `size`×`size` image pair; `rng` only drives sensor noise.
    pub fn render<R: Rng + ?Sized>(&self, id: &str, size: usize, rng: &mut R) -> Result<RenderedPlant> {
        self.validate()?;
        let cultivar = CULTIVARS[self.cultivar];
        let lobes = 5.0 + self.cultivar as f64;
        let mut rgb = vec![0u8; 3 * size * size];
        let mut depth = vec![0u16; size * size];
        let mut count = 0;
        for y in 0..size {
            for x in 0..size {
                let p = y * size + x;
                let r2 = self.radius2(y as f64, x as f64);
                let color = if r2 <= 1.0 {
                    count += 1;
                    let phi = self.polar_angle(y as f64, x as f64);
                    let veins = 0.5 + 0.5 * (lobes * phi + 6.0 * r2.sqrt()).cos();
                    let shade = (0.8 + 0.2 * veins) * (1.0 - 0.25 * r2);
                    let h = self.height_cm * DEPTH_UNITS_PER_CM * (1.0 - r2).sqrt();
                    depth[p] = h.round() as u16;
                    cultivar.color.map(|c| c * shade + rng.random_range(-8.0..8.0))
                } else {
                    [25.0, 20.0, 16.0].map(|c: f64| c + rng.random_range(-6.0..6.0))
                };
                for c in 0..3 {
                    rgb[3 * p + c] = color[c].round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        let traits = self.traits(count);
        let plane = size * size;
        let mut planar = vec![0.0; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                planar[c * plane + p] = rgb[3 * p + c] as f64;
            }
        }
        let sample = Sample::new(
            id,
            Tensor::new([3, size, size], planar).expect("rgb shape"),
            Tensor::new([1, size, size], depth.iter().map(|&d| d as f64).collect()).expect("depth shape"),
            traits,
            cultivar.name,
        )?;
        Ok(RenderedPlant {
            sample,
            rgb_bytes: rgb,
            depth_units: depth,
            pixel_count: count,
        })
    }

    /// Random plant sized relative to the image.
    pub fn random<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Self {
        let s = size as f64;
        let semi_major = rng.random_range(0.10 * s..0.36 * s).max(MIN_RADIUS_PX);
        let semi_minor = (semi_major * rng.random_range(0.65..1.0)).max(MIN_RADIUS_PX);
        let jitter = 0.05 * s;
        let mid = (s - 1.0) / 2.0;
        let diameter_cm = 2.0 * semi_major * PIXEL_SIZE_CM;
        Self {
            center_y: mid + rng.random_range(-jitter..jitter),
            center_x: mid + rng.random_range(-jitter..jitter),
            semi_major,
            semi_minor,
            angle: rng.random_range(0.0..PI),
            height_cm: 1.0 + diameter_cm * rng.random_range(0.4..1.0),
            cultivar: rng.random_range(0..CULTIVARS.len()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RenderedPlant {
    pub sample: Sample,
    /// Interleaved RGB bytes as written to disk.
    pub rgb_bytes: Vec<u8>,
    pub depth_units: Vec<u16>,
    pub pixel_count: usize,
}

/// An in-memory synthetic dataset together with its manifest.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub manifest: Manifest,
    pub plants: Vec<RenderedPlant>,
}

impl SyntheticDataset {
    pub fn samples(&self) -> Vec<Sample> {
        self.plants.iter().map(|p| p.sample.clone()).collect()
    }
}

pub fn sample_id(i: usize) -> String {
    format!("syn-{i:04}")
}

/// `count` plants of `size`×`size` pixels. The last `count / 8` ids form
/// the held-out test set.
pub fn generate_synthetic<R: Rng + ?Sized>(count: usize, size: usize, rng: &mut R) -> Result<SyntheticDataset> {
    if count == 0 {
        return Err(DataError::Empty);
    }
    if size < MIN_IMAGE_SIZE {
        return Err(DataError::Synthetic(format!(
            "image size {size} is below the minimum {MIN_IMAGE_SIZE}"
        )));
    }
    let plants = (0..count)
        .map(|i| BlobParams::random(size, rng).render(&sample_id(i), size, rng))
        .collect::<Result<Vec<_>>>()?;
    let samples: BTreeMap<String, ManifestEntry> = plants
        .iter()
        .map(|p| {
            let id = p.sample.id.clone();
            let entry = ManifestEntry {
                rgb: format!("rgb/{id}.png").into(),
                depth: format!("depth/{id}.png").into(),
                variety: p.sample.variety.clone(),
                traits: p.sample.traits,
            };
            (id, entry)
        })
        .collect();
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        varieties: CULTIVARS.iter().map(|c| c.name.to_string()).collect(),
        test_ids: (count - count / 8..count).map(sample_id).collect(),
        samples,
    };
    manifest.validate()?;
    Ok(SyntheticDataset { manifest, plants })
}

/// Generates a dataset with a ChaCha8 stream seeded by `seed` and writes
/// `manifest.json`, `rgb/*.png` and `depth/*.png` under `out_dir`.
pub fn write_synthetic(out_dir: impl AsRef<Path>, count: usize, size: usize, seed: u64) -> Result<Manifest> {
    let out = out_dir.as_ref();
    let data = generate_synthetic(count, size, &mut ChaCha8Rng::seed_from_u64(seed))?;
    for sub in ["rgb", "depth"] {
        fs::create_dir_all(out.join(sub)).map_err(io_err(out.join(sub)))?;
    }
    for (plant, entry) in data.plants.iter().zip(data.manifest.samples.values()) {
        write_rgb_png(out.join(&entry.rgb), &plant.rgb_bytes, size, size)?;
        write_depth_png(out.join(&entry.depth), &plant.depth_units, size, size)?;
    }
    data.manifest.save(out.join("manifest.json"))?;
    Ok(data.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(r: f64, size: usize) -> BlobParams {
        let mid = (size as f64 - 1.0) / 2.0;
        BlobParams {
            center_y: mid,
            center_x: mid + 0.3,
            semi_major: r,
            semi_minor: r,
            angle: 0.0,
            height_cm: 5.0,
            cultivar: 0,
        }
    }

    #[test]
    fn circle_area_matches_pi_r_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for r in [8.0, 12.5, 20.0, 30.0] {
            let plant = circle(r, 72).render("c", 72, &mut rng).unwrap();
            let expected = PI * r * r * PIXEL_SIZE_CM * PIXEL_SIZE_CM;
            let la = plant.sample.traits.leaf_area;
            assert!((la - expected).abs() / expected < 0.02, "r={r}: {la} vs {expected}");
        }
    }

    #[test]
    fn zero_radius_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let blob = circle(0.0, 32);
        assert!(matches!(
            blob.render("z", 32, &mut rng),
            Err(DataError::BlobTooSmall { .. })
        ));
    }

    #[test]
    fn traits_follow_closed_form() {
        let blob = BlobParams {
            semi_major: 10.0,
            semi_minor: 6.0,
            cultivar: 3,
            ..circle(10.0, 40)
        };
        let t = blob.traits(200);
        assert_eq!(t.leaf_area, 200.0 * 0.0625);
        assert_eq!(t.diameter, 5.0);
        assert_eq!(t.height, 5.0);
        assert!((t.fresh_weight - 0.05 * 12.5 * 5.0).abs() < 1e-12);
        assert!((t.dry_weight - 0.08 * t.fresh_weight).abs() < 1e-12);
    }

    #[test]
    fn depth_apex_equals_height() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let blob = BlobParams {
            center_x: 15.0,
            center_y: 15.0,
            ..circle(8.0, 32)
        };
        let plant = blob.render("d", 32, &mut rng).unwrap();
        let apex = plant.depth_units.iter().copied().max().unwrap() as f64;
        assert_eq!(apex, blob.height_cm * DEPTH_UNITS_PER_CM);
    }
}
