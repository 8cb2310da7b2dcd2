use serde::{Deserialize, Serialize};

use super::{DataError, Result, TraitVector};
use crate::tensor::Tensor;

/// One plant: an RGB image `[3,H,W]` (0–255), an aligned depth image
/// `[1,H,W]` in sensor units, its traits and cultivar.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub rgb: Tensor,
    pub depth: Tensor,
    pub traits: TraitVector,
    pub variety: String,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        rgb: Tensor,
        depth: Tensor,
        traits: TraitVector,
        variety: impl Into<String>,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| DataError::InvalidSample {
            id: id.clone(),
            reason,
        };
        if rgb.rank() != 3 || rgb.shape()[0] != 3 {
            return Err(invalid(format!("rgb must be [3,H,W], got {:?}", rgb.shape())));
        }
        if depth.rank() != 3 || depth.shape()[0] != 1 {
            return Err(invalid(format!(
                "depth must be [1,H,W], got {:?}",
                depth.shape()
            )));
        }
        if rgb.shape()[1..] != depth.shape()[1..] {
            return Err(invalid(format!(
                "rgb {:?} and depth {:?} differ in size",
                rgb.shape(),
                depth.shape()
            )));
        }
        traits.validate().map_err(invalid)?;
        Ok(Self {
            id,
            rgb,
            depth,
            traits,
            variety: variety.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.rgb.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.rgb.shape()[2]
    }
}

/// Read access to an ordered collection of samples. Evaluation goes through
/// this trait so that accesses to held-out data can be observed.
pub trait SampleSet {
    fn len(&self) -> usize;

    fn sample(&self, index: usize) -> &Sample;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSet for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn sample(&self, index: usize) -> &Sample {
        &self[index]
    }
}

impl SampleSet for Vec<Sample> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn sample(&self, index: usize) -> &Sample {
        &self[index]
    }
}

/// Half-open pixel window `y0..y1`, `x0..x1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Default for CropWindow {
    /// The greenhouse camera window: rows 200..900, columns 650..1450,
    /// giving 700×800 pixels.
    fn default() -> Self {
        Self {
            y0: 200,
            y1: 900,
            x0: 650,
            x1: 1450,
        }
    }
}

impl CropWindow {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            y0: 0,
            y1: height,
            x0: 0,
            x1: width,
        }
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    fn fits(&self, height: usize, width: usize) -> bool {
        self.y0 < self.y1 && self.y1 <= height && self.x0 < self.x1 && self.x1 <= width
    }
}

fn crop_tensor(t: &Tensor, win: &CropWindow) -> Tensor {
    let &[c, _, w] = t.shape() else {
        unreachable!("validated image tensor")
    };
    let h_full = t.shape()[1];
    let mut out = Vec::with_capacity(c * win.height() * win.width());
    for ch in 0..c {
        for y in win.y0..win.y1 {
            let row = (ch * h_full + y) * w;
            out.extend_from_slice(&t.data()[row + win.x0..row + win.x1]);
        }
    }
    Tensor::new([c, win.height(), win.width()], out).expect("crop shape")
}

/// Crops RGB and depth identically; traits are untouched.
pub fn crop(sample: &Sample, window: CropWindow) -> Result<Sample> {
    let (h, w) = (sample.height(), sample.width());
    if !window.fits(h, w) {
        return Err(DataError::CropOutOfBounds {
            y0: window.y0,
            y1: window.y1,
            x0: window.x0,
            x1: window.x1,
            height: h,
            width: w,
        });
    }
    Ok(Sample {
        id: sample.id.clone(),
        rgb: crop_tensor(&sample.rgb, &window),
        depth: crop_tensor(&sample.depth, &window),
        traits: sample.traits,
        variety: sample.variety.clone(),
    })
}
