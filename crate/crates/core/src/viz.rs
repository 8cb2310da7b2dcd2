//! Inspection of the offsets learned by the first deformable layer.
//!
//! Offsets are shown as the displaced sampling locations of selected kernel
//! points drawn over the input image. Only "strong" offsets, whose length
//! reaches a threshold (3 px by default, inclusive), are kept. This is a
//! purely geometric view: nothing is weighted by gradients, so it says where
//! the layer looks, not what matters to the prediction.
//!
//! Coordinate mapping: the tap `(ky, kx)` of output position `(oy, ox)`
//! normally reads input pixel `(oy·s − p + ky, ox·s − p + kx)` for stride `s`
//! and padding `p`. Its displaced location adds the offset `(dy, dx)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{write_rgb_png, DataError, Sample};
use crate::model::{Model, ModelError, ModelInput};
use crate::tensor::{Graph, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 3.0;
pub const DEFAULT_MAX_KERNEL_POINTS: usize = 4;

/// One colour per rendered kernel point, in selection order.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [0, 110, 220],
    [145, 30, 180],
    [245, 130, 48],
    [60, 180, 75],
    [70, 240, 240],
    [240, 50, 230],
    [255, 225, 25],
];

/// Height of the legend strip below the image, in output pixels.
pub const LEGEND_HEIGHT: usize = 8;
const SWATCH: usize = 6;

#[derive(Debug, Error)]
pub enum VizError {
    #[error("the model has no deformable layer")]
    NoDeformableLayer,
    #[error("offset tensor {shape:?} does not match kernel {kernel} with {groups} groups")]
    Shape {
        shape: Vec<usize>,
        kernel: usize,
        groups: usize,
    },
    #[error("kernel point {index} out of range; the layer has {count}")]
    KernelPointOutOfRange { index: usize, count: usize },
    #[error("{requested} kernel points requested, at most {max} can be rendered at once")]
    TooManyKernelPoints { requested: usize, max: usize },
    #[error("threshold must be a non-negative number, got {0}")]
    Threshold(f64),
    #[error("scale must be at least 1")]
    Scale,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = VizError> = std::result::Result<T, E>;

/// Geometry of the layer that produced a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    /// Size of the layer's input, which is also the unit of the offsets.
    pub input_height: usize,
    pub input_width: usize,
}

impl FieldGeometry {
    /// Kernel points per group times groups; kernel point `g·k² + k` is tap
    /// `k = ky·kernel + kx` of group `g`.
    pub fn kernel_points(&self) -> usize {
        self.kernel * self.kernel * self.groups
    }

    /// Undisplaced input location of `kernel_point` at output `(oy, ox)`.
    pub fn base(&self, kernel_point: usize, oy: usize, ox: usize) -> (f64, f64) {
        let tap = kernel_point % (self.kernel * self.kernel);
        let (ky, kx) = (tap / self.kernel, tap % self.kernel);
        (
            (oy * self.stride + ky) as f64 - self.padding as f64,
            (ox * self.stride + kx) as f64 - self.padding as f64,
        )
    }
}

/// Offsets of one image, `[2·k²·G, H', W']`, in input pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField {
    pub layer: String,
    pub geometry: FieldGeometry,
    offsets: Tensor,
}

impl OffsetField {
    pub fn new(layer: impl Into<String>, offsets: Tensor, geometry: FieldGeometry) -> Result<Self> {
        if offsets.rank() != 3 || offsets.shape()[0] != 2 * geometry.kernel_points() {
            return Err(VizError::Shape {
                shape: offsets.shape().to_vec(),
                kernel: geometry.kernel,
                groups: geometry.groups,
            });
        }
        Ok(Self {
            layer: layer.into(),
            geometry,
            offsets,
        })
    }

    pub fn offsets(&self) -> &Tensor {
        &self.offsets
    }

    /// Output grid size `(H', W')`.
    pub fn grid(&self) -> (usize, usize) {
        (self.offsets.shape()[1], self.offsets.shape()[2])
    }

    /// `(dy, dx)` of `kernel_point` at output `(oy, ox)`.
    pub fn get(&self, kernel_point: usize, oy: usize, ox: usize) -> (f64, f64) {
        let (h, w) = self.grid();
        let at = |c: usize| self.offsets.data()[(c * h + oy) * w + ox];
        (at(2 * kernel_point), at(2 * kernel_point + 1))
    }
}

/// Offsets of the first deformable layer for one (normalized) sample.
pub fn extract_offsets(model: &Model, sample: &Sample) -> Result<OffsetField> {
    let graph = Graph::new();
    let input = ModelInput::from_samples(&[sample], &model.config().inputs);
    let out = model.forward(&graph, &input, false)?;
    let record = out.offsets.first().ok_or(VizError::NoDeformableLayer)?;
    let value = record.offsets.value();
    let shape = value.shape()[1..].to_vec();
    let geometry = FieldGeometry {
        kernel: record.kernel,
        stride: record.stride,
        padding: record.padding,
        groups: record.groups,
        input_height: sample.height(),
        input_width: sample.width(),
    };
    let offsets = Tensor::new(shape, value.data().to_vec()).expect("batch of one");
    OffsetField::new(record.layer.clone(), offsets, geometry)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongOffset {
    pub oy: usize,
    pub ox: usize,
    pub kernel_point: usize,
    pub dy: f64,
    pub dx: f64,
    /// `√(dy² + dx²)`, always at least the set's threshold.
    pub magnitude: f64,
}

/// Offsets at or above a threshold, ordered by kernel point, then output
/// row, then column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongOffsetSet {
    pub threshold: f64,
    pub geometry: FieldGeometry,
    pub entries: Vec<StrongOffset>,
}

impl StrongOffsetSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn by_kernel_point(&self) -> BTreeMap<usize, Vec<StrongOffset>> {
        let mut out: BTreeMap<usize, Vec<StrongOffset>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.kernel_point).or_default().push(*e);
        }
        out
    }

    /// The `n` kernel points with the most strong offsets; ties go to the
    /// lower index.
    pub fn busiest_kernel_points(&self, n: usize) -> Vec<usize> {
        let mut counts: Vec<(usize, usize)> = self
            .by_kernel_point()
            .into_iter()
            .map(|(k, v)| (k, v.len()))
            .collect();
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        counts.into_iter().take(n).map(|(k, _)| k).collect()
    }

    /// Displaced input location of `entry`.
    pub fn location(&self, entry: &StrongOffset) -> (f64, f64) {
        let (y, x) = self.geometry.base(entry.kernel_point, entry.oy, entry.ox);
        (y + entry.dy, x + entry.dx)
    }
}

/// Keeps the offsets whose magnitude is at least `threshold`.
pub fn filter_strong(field: &OffsetField, threshold: f64) -> Result<StrongOffsetSet> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(VizError::Threshold(threshold));
    }
    let (h, w) = field.grid();
    let mut entries = Vec::new();
    for kernel_point in 0..field.geometry.kernel_points() {
        for oy in 0..h {
            for ox in 0..w {
                let (dy, dx) = field.get(kernel_point, oy, ox);
                let magnitude = dy.hypot(dx);
                if magnitude >= threshold {
                    entries.push(StrongOffset {
                        oy,
                        ox,
                        kernel_point,
                        dy,
                        dx,
                        magnitude,
                    });
                }
            }
        }
    }
    Ok(StrongOffsetSet {
        threshold,
        geometry: field.geometry,
        entries,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayOptions {
    pub max_kernel_points: usize,
    /// Integer upscaling of the base image.
    pub scale: usize,
    /// Half-width of the square marker, in output pixels.
    pub marker_radius: usize,
}

impl Default for OverlayOptions {
    fn default() -> Self {
        Self {
            max_kernel_points: DEFAULT_MAX_KERNEL_POINTS,
            scale: 1,
            marker_radius: 0,
        }
    }
}

/// Where one strong offset was drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlottedPoint {
    pub kernel_point: usize,
    /// Displaced location in input pixels, before clamping.
    pub y: f64,
    pub x: f64,
    /// Output pixel of the marker centre.
    pub row: usize,
    pub col: usize,
    /// The location fell outside the image and was pulled to the nearest
    /// border pixel; such points are drawn as a hollow square.
    pub clamped: bool,
}

/// An RGB raster: the scaled image with a legend strip of one swatch per
/// kernel point (in palette order) underneath.
#[derive(Clone, Debug, PartialEq)]
pub struct Overlay {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
    /// Kernel point and colour of each legend swatch.
    pub legend: Vec<(usize, [u8; 3])>,
    pub points: Vec<PlottedPoint>,
}

impl Overlay {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, row: isize, col: isize, rows: usize, colour: [u8; 3]) {
        if row >= 0 && col >= 0 && (row as usize) < rows && (col as usize) < self.width {
            let i = 3 * (row as usize * self.width + col as usize);
            self.pixels[i..i + 3].copy_from_slice(&colour);
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_rgb_png(path, &self.pixels, self.width, self.height)?)
    }
}

/// Draws the strong offsets of `kernel_points` over the raw RGB image of
/// `sample`.
pub fn render_overlay(
    sample: &Sample,
    strong: &StrongOffsetSet,
    kernel_points: &[usize],
    options: &OverlayOptions,
) -> Result<Overlay> {
    let count = strong.geometry.kernel_points();
    if let Some(&index) = kernel_points.iter().find(|&&k| k >= count) {
        return Err(VizError::KernelPointOutOfRange { index, count });
    }
    let max = options.max_kernel_points.min(PALETTE.len());
    if kernel_points.len() > max {
        return Err(VizError::TooManyKernelPoints {
            requested: kernel_points.len(),
            max,
        });
    }
    if options.scale == 0 {
        return Err(VizError::Scale);
    }
    let s = options.scale;
    let (h, w) = (sample.height(), sample.width());
    let (rows, width) = (h * s, w * s);
    let mut overlay = Overlay {
        width,
        height: rows + LEGEND_HEIGHT,
        pixels: vec![255; 3 * width * (rows + LEGEND_HEIGHT)],
        legend: kernel_points.iter().zip(PALETTE).map(|(&k, c)| (k, c)).collect(),
        points: Vec::new(),
    };
    let plane = h * w;
    for r in 0..rows {
        for c in 0..width {
            let src = (r / s) * w + c / s;
            let colour = [0, 1, 2].map(|ch| sample.rgb.data()[ch * plane + src].round().clamp(0.0, 255.0) as u8);
            overlay.put(r as isize, c as isize, rows, colour);
        }
    }

    let centre = |v: f64| (v * s as f64 + (s as f64 - 1.0) / 2.0).round() as usize;
    let radius = options.marker_radius as isize;
    let groups = strong.by_kernel_point();
    for &(k, colour) in &overlay.legend.clone() {
        for e in groups.get(&k).into_iter().flatten() {
            let (y, x) = strong.location(e);
            let (cy, cx) = (y.clamp(0.0, (h - 1) as f64), x.clamp(0.0, (w - 1) as f64));
            let clamped = (cy, cx) != (y, x);
            let (row, col) = (centre(cy), centre(cx));
            let r = if clamped { radius.max(1) } else { radius };
            for dy in -r..=r {
                for dx in -r..=r {
                    let ring = dy.abs() == r || dx.abs() == r;
                    if !clamped || ring {
                        overlay.put(row as isize + dy, col as isize + dx, rows, colour);
                    }
                }
            }
            overlay.points.push(PlottedPoint {
                kernel_point: k,
                y,
                x,
                row,
                col,
                clamped,
            });
        }
    }

    let top = rows + (LEGEND_HEIGHT - SWATCH) / 2;
    for (i, &(_, colour)) in overlay.legend.clone().iter().enumerate() {
        let left = 2 + i * (SWATCH + 2);
        for r in top..top + SWATCH {
            for c in left..(left + SWATCH).min(width) {
                overlay.put(r as isize, c as isize, rows + LEGEND_HEIGHT, colour);
            }
        }
    }
    Ok(overlay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TraitVector;

    fn geometry(kernel: usize, stride: usize, padding: usize, groups: usize, size: usize) -> FieldGeometry {
        FieldGeometry {
            kernel,
            stride,
            padding,
            groups,
            input_height: size,
            input_width: size,
        }
    }

    /// A 3×3 kernel, one group, on a 5×5 output grid.
    fn field_with(entries: &[(usize, usize, usize, f64, f64)]) -> OffsetField {
        let mut t = Tensor::zeros([18, 5, 5]);
        for &(k, oy, ox, dy, dx) in entries {
            t.data_mut()[(2 * k * 5 + oy) * 5 + ox] = dy;
            t.data_mut()[((2 * k + 1) * 5 + oy) * 5 + ox] = dx;
        }
        OffsetField::new("l", t, geometry(3, 1, 1, 1, 5)).unwrap()
    }

    fn gray(size: usize) -> Sample {
        Sample::new(
            "g",
            Tensor::full([3, size, size], 128.0),
            Tensor::zeros([1, size, size]),
            TraitVector {
                fresh_weight: 1.0,
                dry_weight: 0.1,
                height: 1.0,
                diameter: 1.0,
                leaf_area: 1.0,
            },
            "v",
        )
        .unwrap()
    }

    #[test]
    fn threshold_is_inclusive() {
        let f = field_with(&[(0, 0, 0, 3.0, 0.0), (1, 1, 1, 1.0, 1.0), (2, 2, 2, 3.0, 4.0)]);
        let s = filter_strong(&f, 3.0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.entries[1].magnitude, 5.0);
        assert_eq!(filter_strong(&f, 0.0).unwrap().len(), 9 * 25);
        assert!(filter_strong(&f, f64::INFINITY).unwrap().is_empty());
        assert!(filter_strong(&f, -1.0).is_err());
    }

    #[test]
    fn base_location_matches_hand_computation() {
        // stride 2, padding 1, kernel 3: tap (2, 0) of output (1, 3) reads (3, 5)
        let g = geometry(3, 2, 1, 2, 10);
        assert_eq!(g.base(6, 1, 3), (3.0, 5.0));
        assert_eq!(g.base(9 + 6, 1, 3), (3.0, 5.0), "second group, same tap");
        assert_eq!(g.base(0, 0, 0), (-1.0, -1.0));
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        assert!(OffsetField::new("l", Tensor::zeros([17, 5, 5]), geometry(3, 1, 1, 1, 5)).is_err());
    }

    #[test]
    fn empty_set_leaves_the_image_and_draws_the_legend() {
        let f = field_with(&[]);
        let s = filter_strong(&f, 3.0).unwrap();
        let o = render_overlay(&gray(5), &s, &[0, 1, 2, 3], &OverlayOptions::default()).unwrap();
        assert!(o.points.is_empty());
        assert!((0..5).all(|r| (0..5).all(|c| o.pixel(r, c) == [128; 3])));
        let colours: std::collections::HashSet<[u8; 3]> = o.legend.iter().map(|l| l.1).collect();
        assert_eq!(colours.len(), 4);
        assert_eq!(o.height, 5 + LEGEND_HEIGHT);
    }

    #[test]
    fn selection_limits_are_enforced() {
        let s = filter_strong(&field_with(&[]), 3.0).unwrap();
        let opts = OverlayOptions::default();
        assert!(matches!(
            render_overlay(&gray(5), &s, &[9], &opts),
            Err(VizError::KernelPointOutOfRange { index: 9, count: 9 })
        ));
        assert!(matches!(
            render_overlay(&gray(5), &s, &[0, 1, 2, 3, 4], &opts),
            Err(VizError::TooManyKernelPoints { .. })
        ));
    }

    #[test]
    fn out_of_image_points_are_clamped_and_marked() {
        let f = field_with(&[(4, 0, 0, -6.0, 0.0)]);
        let s = filter_strong(&f, 3.0).unwrap();
        let o = render_overlay(&gray(5), &s, &[4], &OverlayOptions::default()).unwrap();
        let p = o.points[0];
        assert!(p.clamped);
        assert_eq!((p.y, p.x, p.row, p.col), (-6.0, 0.0, 0, 0));
        assert_eq!(o.pixel(0, 0), [128; 3], "hollow marker");
        assert_eq!(o.pixel(1, 1), PALETTE[0]);
    }
}
