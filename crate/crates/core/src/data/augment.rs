use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::tensor::Tensor;

/// Training-time augmentation knobs. Every transform is applied to RGB and
/// depth together so the pair stays pixel-aligned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub rotate_prob: f64,
    /// Rotation angle is uniform in `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    pub shift_prob: f64,
    /// Integer shift bound as a fraction of the image side.
    pub max_shift_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            rotate_prob: 0.5,
            max_rotation_deg: 180.0,
            shift_prob: 0.5,
            max_shift_frac: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            rotate_prob: 0.0,
            shift_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("hflip_prob", self.hflip_prob),
            ("vflip_prob", self.vflip_prob),
            ("rotate_prob", self.rotate_prob),
            ("shift_prob", self.shift_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} must lie in [0, 1]"));
            }
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite()) {
            return Err("max_rotation_deg must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.max_shift_frac) {
            return Err("max_shift_frac must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Rotation by `angle` (radians, counter-clockwise in the displayed image)
/// about the image centre, followed by an integer translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricTransform {
    pub angle: f64,
    pub shift_y: i64,
    pub shift_x: i64,
    center_y: f64,
    center_x: f64,
}

impl GeometricTransform {
    pub fn new(height: usize, width: usize, angle: f64, shift_y: i64, shift_x: i64) -> Self {
        Self {
            angle,
            shift_y,
            shift_x,
            center_y: (height as f64 - 1.0) / 2.0,
            center_x: (width as f64 - 1.0) / 2.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.angle == 0.0 && self.shift_y == 0 && self.shift_x == 0
    }

    /// Where source pixel `(y, x)` lands.
    pub fn forward(&self, y: f64, x: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.center_y, x - self.center_x);
        // y grows downwards, so a visually counter-clockwise turn is
        // clockwise in (x, y) coordinates
        let ry = c * dy - s * dx;
        let rx = s * dy + c * dx;
        (
            ry + self.center_y + self.shift_y as f64,
            rx + self.center_x + self.shift_x as f64,
        )
    }

    /// Which source location output pixel `(y, x)` reads from.
    pub fn inverse(&self, y: f64, x: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let dy = y - self.center_y - self.shift_y as f64;
        let dx = x - self.center_x - self.shift_x as f64;
        (c * dy + s * dx + self.center_y, -s * dy + c * dx + self.center_x)
    }

    fn warp(&self, t: &Tensor, bilinear: bool) -> Tensor {
        let (ch, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let plane = h * w;
        let mut out = vec![0.0; t.len()];
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = self.inverse(y as f64, x as f64);
                for c in 0..ch {
                    let src = &t.data()[c * plane..(c + 1) * plane];
                    out[c * plane + y * w + x] = if bilinear {
                        crate::deform::bilinear(src, h, w, sy, sx)
                    } else {
                        nearest(src, h, w, sy, sx)
                    };
                }
            }
        }
        Tensor::new(t.shape().to_vec(), out).expect("warp shape")
    }
}

fn nearest(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (yi, xi) = (y.round(), x.round());
    if yi < 0.0 || xi < 0.0 || yi >= h as f64 || xi >= w as f64 {
        return 0.0;
    }
    plane[yi as usize * w + xi as usize]
}

fn flip(t: &mut Tensor, horizontal: bool) {
    let (ch, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let data = t.data_mut();
    for c in 0..ch {
        let plane = &mut data[c * h * w..(c + 1) * h * w];
        if horizontal {
            plane.chunks_exact_mut(w).for_each(|row| row.reverse());
        } else {
            for y in 0..h / 2 {
                let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
                top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
            }
        }
    }
}

/// Random flips, then one combined rotation/shift resample (bilinear for
/// RGB, nearest for depth, zero fill). Traits are untouched.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, config: &AugmentConfig, rng: &mut R) -> Sample {
    let mut rgb = sample.rgb.clone();
    let mut depth = sample.depth.clone();
    for horizontal in [true, false] {
        let p = if horizontal { config.hflip_prob } else { config.vflip_prob };
        if rng.random::<f64>() < p {
            flip(&mut rgb, horizontal);
            flip(&mut depth, horizontal);
        }
    }
    let angle = if rng.random::<f64>() < config.rotate_prob && config.max_rotation_deg > 0.0 {
        rng.random_range(-config.max_rotation_deg..=config.max_rotation_deg).to_radians()
    } else {
        0.0
    };
    let (h, w) = (sample.height(), sample.width());
    let (mut shift_y, mut shift_x) = (0, 0);
    if rng.random::<f64>() < config.shift_prob {
        let by = (config.max_shift_frac * h as f64).round() as i64;
        let bx = (config.max_shift_frac * w as f64).round() as i64;
        shift_y = rng.random_range(-by..=by);
        shift_x = rng.random_range(-bx..=bx);
    }
    let transform = GeometricTransform::new(h, w, angle, shift_y, shift_x);
    if !transform.is_identity() {
        rgb = transform.warp(&rgb, true);
        depth = transform.warp(&depth, false);
    }
    Sample {
        rgb,
        depth,
        ..sample.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TraitVector;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn traits() -> TraitVector {
        TraitVector {
            fresh_weight: 3.0,
            dry_weight: 0.3,
            height: 2.0,
            diameter: 5.0,
            leaf_area: 9.0,
        }
    }

    /// A 3×3 marker at `(y, x)` in every RGB channel and in depth.
    fn marker(h: usize, w: usize, y: usize, x: usize) -> Sample {
        let mut rgb = Tensor::zeros([3, h, w]);
        let mut depth = Tensor::zeros([1, h, w]);
        for dy in 0..3 {
            for dx in 0..3 {
                let p = (y + dy - 1) * w + x + dx - 1;
                for c in 0..3 {
                    rgb.data_mut()[c * h * w + p] = 200.0;
                }
                depth.data_mut()[p] = 1000.0;
            }
        }
        Sample::new("m", rgb, depth, traits(), "v").unwrap()
    }

    fn centroid(plane: &[f64], w: usize) -> (f64, f64) {
        let total: f64 = plane.iter().sum();
        let (mut cy, mut cx) = (0.0, 0.0);
        for (i, v) in plane.iter().enumerate() {
            cy += (i / w) as f64 * v;
            cx += (i % w) as f64 * v;
        }
        (cy / total, cx / total)
    }

    #[test]
    fn flips_are_exact_involutions() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t0 = Tensor::uniform([2, 5, 4], 0.0, 1.0, &mut r);
        for horizontal in [true, false] {
            let mut t = t0.clone();
            flip(&mut t, horizontal);
            assert_ne!(t, t0);
            flip(&mut t, horizontal);
            assert_eq!(t, t0);
        }
        let mut t = Tensor::new([1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        flip(&mut t, false);
        assert_eq!(t.data(), &[4., 5., 6., 1., 2., 3.]);
    }

    #[test]
    fn disabled_config_is_identity() {
        let s = marker(12, 12, 4, 6);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert_eq!(augment(&s, &AugmentConfig::disabled(), &mut r), s);
    }

    #[test]
    fn quarter_turn_maps_marker_to_predicted_location() {
        let (h, w) = (21, 21);
        let s = marker(h, w, 5, 10);
        let t = GeometricTransform::new(h, w, std::f64::consts::FRAC_PI_2, 0, 0);
        let (py, px) = t.forward(5.0, 10.0);
        let depth = t.warp(&s.depth, false);
        let (cy, cx) = centroid(depth.data(), w);
        assert!((cy - py).abs() < 1e-9 && (cx - px).abs() < 1e-9, "({cy},{cx}) vs ({py},{px})");
        // counter-clockwise on screen: the top marker moves to the left side
        assert!(px < 10.0);
    }

    #[test]
    fn inverse_undoes_forward() {
        let t = GeometricTransform::new(40, 30, 0.7, -3, 4);
        let (y, x) = t.forward(12.5, 7.25);
        let (by, bx) = t.inverse(y, x);
        assert!((by - 12.5).abs() < 1e-12 && (bx - 7.25).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Whatever the random draw, RGB and depth markers end up at the
        /// same place (within the 1 px nearest/bilinear discrepancy), and
        /// both sit where the geometry says.
        #[test]
        fn rgb_and_depth_stay_aligned(seed in any::<u64>(), y in 12usize..20, x in 12usize..20) {
            let (h, w) = (32, 32);
            let s = marker(h, w, y, x);
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cfg = AugmentConfig { rotate_prob: 1.0, shift_prob: 1.0, ..AugmentConfig::default() };
            let out = augment(&s, &cfg, &mut r);
            let (ry, rx) = centroid(&out.rgb.data()[..h * w], w);
            let (dy, dx) = centroid(out.depth.data(), w);
            prop_assert!((ry - dy).abs() <= 1.0 && (rx - dx).abs() <= 1.0,
                "rgb ({ry},{rx}) depth ({dy},{dx})");
            prop_assert_eq!(out.traits, s.traits);
        }
    }
}
