//! Deformable 2D convolution.
//!
//! A companion "offset" convolution looks at the input and predicts, for
//! every output position and every kernel tap, a displacement `(dy, dx)` in
//! input pixels. The main convolution then reads its taps at the displaced
//! (fractional) locations through bilinear interpolation.
//!
//! Offset layout: the offset tensor has shape `[N, 2·kH·kW·G, H', W']` where
//! `G` is the number of offset groups. Channel `2·(g·K + k)` holds `dy` and
//! channel `2·(g·K + k) + 1` holds `dx` for kernel tap `k = ky·kW + kx` of
//! group `g`; group `g` covers input channels `g·C/G .. (g+1)·C/G`.
//!
//! "Number of offsets" in a layer specification is read as this group count
//! `G`. An alternative reading (e.g. one offset set per input channel for a
//! 3-channel input) coincides with `G = C` and is expressible with the same
//! parameterization.
//!
//! Sampling outside the image reads zero-valued phantom pixels, matching the
//! zero padding of standard convolution, so a layer whose offsets are all
//! zero computes exactly the standard convolution.

use rayon::prelude::*;

use crate::tensor::ops::{
    self, bias_grad, column_grad, forward_with_columns, weight_grad_with_columns, Conv2dParams,
    ConvGeometry,
};
use crate::tensor::{Graph, Result, Tensor, TensorError, Var};

#[inline]
fn pixel(plane: &[f64], h: usize, w: usize, y: isize, x: isize) -> f64 {
    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
        plane[y as usize * w + x as usize]
    } else {
        0.0
    }
}

#[inline]
fn outside(h: usize, w: usize, y: f64, x: f64) -> bool {
    y <= -1.0 || y >= h as f64 || x <= -1.0 || x >= w as f64 || y.is_nan() || x.is_nan()
}

/// Bilinear interpolation of an `h×w` plane at fractional `(y, x)`.
///
/// The interpolation cell is anchored at `(floor(y), floor(x))`; neighbors
/// outside the plane read as zero and points entirely outside
/// `(-1, h) × (-1, w)` return zero.
#[inline]
pub fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    if outside(h, w, y, x) {
        return 0.0;
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (ly, lx) = (y - y0, x - x0);
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    let (yi, xi) = (y0 as isize, x0 as isize);
    hy * hx * pixel(plane, h, w, yi, xi)
        + hy * lx * pixel(plane, h, w, yi, xi + 1)
        + ly * hx * pixel(plane, h, w, yi + 1, xi)
        + ly * lx * pixel(plane, h, w, yi + 1, xi + 1)
}

/// Value and partial derivatives `(v, ∂v/∂y, ∂v/∂x)`.
///
/// At integer coordinates the derivative is the one of the cell anchored at
/// the top/left neighbor.
#[inline]
pub fn bilinear_with_grad(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> (f64, f64, f64) {
    if outside(h, w, y, x) {
        return (0.0, 0.0, 0.0);
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (ly, lx) = (y - y0, x - x0);
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    let (yi, xi) = (y0 as isize, x0 as isize);
    let v00 = pixel(plane, h, w, yi, xi);
    let v01 = pixel(plane, h, w, yi, xi + 1);
    let v10 = pixel(plane, h, w, yi + 1, xi);
    let v11 = pixel(plane, h, w, yi + 1, xi + 1);
    let v = hy * hx * v00 + hy * lx * v01 + ly * hx * v10 + ly * lx * v11;
    let dy = hx * (v10 - v00) + lx * (v11 - v01);
    let dx = hy * (v01 - v00) + ly * (v11 - v10);
    (v, dy, dx)
}

/// Adds `g · ∂bilinear/∂pixel` into `plane_grad`; phantom neighbors are skipped.
#[inline]
fn bilinear_scatter(plane_grad: &mut [f64], h: usize, w: usize, y: f64, x: f64, g: f64) {
    if outside(h, w, y, x) {
        return;
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (ly, lx) = (y - y0, x - x0);
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    let (yi, xi) = (y0 as isize, x0 as isize);
    for (dy, dx, weight) in [
        (0, 0, hy * hx),
        (0, 1, hy * lx),
        (1, 0, ly * hx),
        (1, 1, ly * lx),
    ] {
        let (yy, xx) = (yi + dy, xi + dx);
        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
            plane_grad[yy as usize * w + xx as usize] += g * weight;
        }
    }
}

/// Differentiable bilinear read of `input[n, c]` at `coords = (y, x)`.
/// Returns a scalar differentiable w.r.t. both the pixels and the coordinates.
pub fn bilinear_sample<'g>(input: Var<'g>, coords: Var<'g>, n: usize, c: usize) -> Result<Var<'g>> {
    let x = input.value();
    x.expect_rank("bilinear_sample", 4)?;
    let &[bn, bc, h, w] = x.shape() else {
        unreachable!()
    };
    let cv = coords.value();
    if cv.shape() != [2] {
        return Err(TensorError::DimMismatch {
            op: "bilinear_sample",
            axis: "coords",
            expected: 2,
            actual: cv.len(),
        });
    }
    if n >= bn || c >= bc {
        return Err(TensorError::Config {
            op: "bilinear_sample",
            reason: format!("plane ({n}, {c}) outside a batch of shape {:?}", x.shape()),
        });
    }
    let offset = (n * bc + c) * h * w;
    let (py, px) = (cv.data()[0], cv.data()[1]);
    let value = bilinear(&x.data()[offset..offset + h * w], h, w, py, px);
    Ok(input.graph().record(
        Tensor::scalar(value),
        &[input, coords],
        Box::new(move |args| {
            let g = args.grad.data()[0];
            let x = &args.inputs[0];
            let plane = &x.data()[offset..offset + h * w];
            let dinput = args.needs[0].then(|| {
                let mut d = vec![0.0; x.len()];
                bilinear_scatter(&mut d[offset..offset + h * w], h, w, py, px, g);
                Tensor::new(x.shape().to_vec(), d).expect("input shape")
            });
            let dcoords = args.needs[1].then(|| {
                let (_, dy, dx) = bilinear_with_grad(plane, h, w, py, px);
                Tensor::new([2], vec![g * dy, g * dx]).expect("coords shape")
            });
            vec![dinput, dcoords]
        }),
    ))
}

#[derive(Clone, Copy)]
struct DeformGeometry {
    conv: ConvGeometry,
    groups: usize,
}

impl DeformGeometry {
    fn offset_plane(&self) -> usize {
        2 * self.conv.kernel_points() * self.groups * self.conv.out_pixels()
    }

    /// Calls `visit(row, p, y, x)` for every column entry of image `i`, with
    /// `(y, x)` the displaced sampling location.
    #[inline]
    fn for_each_tap(&self, offsets: &[f64], mut visit: impl FnMut(usize, usize, usize, f64, f64)) {
        let geo = &self.conv;
        let k_total = geo.kernel_points();
        let p_total = geo.out_pixels();
        let per_group = geo.c / self.groups;
        for c in 0..geo.c {
            let g = c / per_group;
            for k in 0..k_total {
                let (ky, kx) = (k / geo.kw, k % geo.kw);
                let chan = 2 * (g * k_total + k);
                let off_y = &offsets[chan * p_total..(chan + 1) * p_total];
                let off_x = &offsets[(chan + 1) * p_total..(chan + 2) * p_total];
                let row = c * k_total + k;
                for oy in 0..geo.ho {
                    for ox in 0..geo.wo {
                        let p = oy * geo.wo + ox;
                        let (by, bx) = geo.base_coord(oy, ox, ky, kx);
                        visit(row, chan, p, by as f64 + off_y[p], bx as f64 + off_x[p]);
                    }
                }
            }
        }
    }

    fn im2col(&self, image: &[f64], offsets: &[f64], cols: &mut [f64]) {
        let geo = &self.conv;
        let (h, w, hw, p_total) = (geo.h, geo.w, geo.h * geo.w, geo.out_pixels());
        self.for_each_tap(offsets, |row, _, p, y, x| {
            let c = row / geo.kernel_points();
            cols[row * p_total + p] = bilinear(&image[c * hw..(c + 1) * hw], h, w, y, x);
        });
    }
}

/// Deformable convolution given precomputed offsets.
///
/// `input [N,C,H,W]`, `offset [N, 2·kH·kW·G, H', W']`, `weight [F,C,kH,kW]`,
/// optional `bias [F]`. Differentiable w.r.t. all four.
pub fn deform_conv2d<'g>(
    input: Var<'g>,
    offset: Var<'g>,
    weight: Var<'g>,
    bias: Option<Var<'g>>,
    params: Conv2dParams,
    offset_groups: usize,
) -> Result<Var<'g>> {
    let (x, off, w) = (input.value(), offset.value(), weight.value());
    let b = bias.map(|b| b.value());
    let conv = ConvGeometry::resolve(
        "deform_conv2d",
        x.shape(),
        w.shape(),
        b.as_ref().map(|b| b.shape()),
        params,
    )?;
    check_groups("deform_conv2d", conv.c, offset_groups)?;
    let geo = DeformGeometry {
        conv,
        groups: offset_groups,
    };
    let expected = [conv.n, 2 * conv.kernel_points() * offset_groups, conv.ho, conv.wo];
    if off.shape() != expected {
        let (axis, e, a) = if off.rank() != 4 {
            ("offset rank", 4, off.rank())
        } else if off.shape()[1] != expected[1] {
            ("offset channels", expected[1], off.shape()[1])
        } else if off.shape()[0] != expected[0] {
            ("offset batch", expected[0], off.shape()[0])
        } else {
            ("offset spatial", conv.out_pixels(), off.shape()[2] * off.shape()[3])
        };
        return Err(TensorError::DimMismatch {
            op: "deform_conv2d",
            axis,
            expected: e,
            actual: a,
        });
    }

    let (xd, od) = (x.data(), off.data());
    let (in_plane, off_plane) = (conv.in_plane(), geo.offset_plane());
    let out = forward_with_columns(&conv, w.data(), b.as_ref().map(|b| b.data()), |i, cols| {
        geo.im2col(
            &xd[i * in_plane..(i + 1) * in_plane],
            &od[i * off_plane..(i + 1) * off_plane],
            cols,
        )
    });
    let out = Tensor::new(conv.output_shape(), out)?;

    let mut parents = vec![input, offset, weight];
    parents.extend(bias);
    Ok(input.graph().record(
        out,
        &parents,
        Box::new(move |args| {
            let (x, off, w) = (&args.inputs[0], &args.inputs[1], &args.inputs[2]);
            let (xd, od, wd) = (x.data(), off.data(), w.data());
            let g = args.grad.data();
            let (need_x, need_off) = (args.needs[0], args.needs[1]);

            let (mut dx, mut doff) = (Vec::new(), Vec::new());
            if need_x || need_off {
                dx = vec![0.0; xd.len()];
                doff = vec![0.0; od.len()];
                let (h, wdt, hw) = (conv.h, conv.w, conv.h * conv.w);
                let p_total = conv.out_pixels();
                dx.par_chunks_mut(in_plane.max(1))
                    .zip(doff.par_chunks_mut(off_plane.max(1)))
                    .enumerate()
                    .for_each(|(i, (dx_i, doff_i))| {
                        let gi = &g[i * conv.out_plane()..(i + 1) * conv.out_plane()];
                        let dcols = column_grad(&conv, wd, gi);
                        let image = &xd[i * in_plane..(i + 1) * in_plane];
                        let offs = &od[i * off_plane..(i + 1) * off_plane];
                        geo.for_each_tap(offs, |row, chan, p, y, x| {
                            let gc = dcols[row * p_total + p];
                            if gc == 0.0 {
                                return;
                            }
                            let c = row / conv.kernel_points();
                            if need_off {
                                let (_, gy, gx) =
                                    bilinear_with_grad(&image[c * hw..(c + 1) * hw], h, wdt, y, x);
                                doff_i[chan * p_total + p] += gc * gy;
                                doff_i[(chan + 1) * p_total + p] += gc * gx;
                            }
                            if need_x {
                                bilinear_scatter(&mut dx_i[c * hw..(c + 1) * hw], h, wdt, y, x, gc);
                            }
                        });
                    });
            }
            let dw = args.needs[2].then(|| {
                let dw = weight_grad_with_columns(&conv, g, |i, cols| {
                    geo.im2col(
                        &xd[i * in_plane..(i + 1) * in_plane],
                        &od[i * off_plane..(i + 1) * off_plane],
                        cols,
                    )
                });
                Tensor::new(w.shape().to_vec(), dw).expect("weight shape")
            });
            let mut grads = vec![
                need_x.then(|| Tensor::new(x.shape().to_vec(), dx).expect("input shape")),
                need_off.then(|| Tensor::new(off.shape().to_vec(), doff).expect("offset shape")),
                dw,
            ];
            if args.inputs.len() == 4 {
                grads.push(
                    args.needs[3]
                        .then(|| Tensor::new([conv.f], bias_grad(&conv, g)).expect("bias shape")),
                );
            }
            grads
        }),
    ))
}

fn check_groups(op: &'static str, channels: usize, groups: usize) -> Result<()> {
    if groups == 0 || channels % groups != 0 {
        return Err(TensorError::Config {
            op,
            reason: format!("offset groups {groups} do not divide {channels} input channels"),
        });
    }
    Ok(())
}

/// A standard convolution with its own weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub params: Conv2dParams,
}

impl Conv2dLayer {
    pub fn new(weight: Tensor, bias: Tensor, params: Conv2dParams) -> Result<Self> {
        weight.expect_rank("conv2d layer", 4)?;
        if bias.shape() != [weight.shape()[0]] {
            return Err(TensorError::DimMismatch {
                op: "conv2d layer",
                axis: "out_channels",
                expected: weight.shape()[0],
                actual: bias.len(),
            });
        }
        Ok(Self {
            weight,
            bias,
            params,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    /// Applies the layer with its tensors bound as trainable leaves.
    pub fn forward<'g>(&self, graph: &'g Graph, input: Var<'g>) -> Result<Var<'g>> {
        let w = graph.param(self.weight.clone());
        let b = graph.param(self.bias.clone());
        ops::conv2d(input, w, Some(b), self.params)
    }
}

/// Offset convolution plus main convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformableConvLayer {
    pub main: Conv2dLayer,
    pub offset: Conv2dLayer,
    offset_groups: usize,
}

/// Output of a deformable layer together with the offsets it used.
pub struct DeformOutput<'g> {
    pub output: Var<'g>,
    pub offsets: Var<'g>,
}

impl DeformableConvLayer {
    pub fn new(main: Conv2dLayer, offset: Conv2dLayer, offset_groups: usize) -> Result<Self> {
        check_groups("deformable layer", main.in_channels(), offset_groups)?;
        let (kh, kw) = main.kernel();
        let want = 2 * kh * kw * offset_groups;
        if offset.out_channels() != want {
            return Err(TensorError::DimMismatch {
                op: "deformable layer",
                axis: "offset out_channels",
                expected: want,
                actual: offset.out_channels(),
            });
        }
        if offset.in_channels() != main.in_channels()
            || offset.kernel() != main.kernel()
            || offset.params != main.params
        {
            return Err(TensorError::Config {
                op: "deformable layer",
                reason: "offset convolution must share the main convolution's input, kernel, stride and padding".into(),
            });
        }
        Ok(Self {
            main,
            offset,
            offset_groups,
        })
    }

    pub fn offset_groups(&self) -> usize {
        self.offset_groups
    }

    /// `2·kH·kW·G`.
    pub fn offset_channels(&self) -> usize {
        self.offset.out_channels()
    }

    pub fn forward<'g>(&self, graph: &'g Graph, input: Var<'g>) -> Result<DeformOutput<'g>> {
        let offsets = self.offset.forward(graph, input)?;
        let w = graph.param(self.main.weight.clone());
        let b = graph.param(self.main.bias.clone());
        let output = deform_conv2d(input, offsets, w, Some(b), self.main.params, self.offset_groups)?;
        Ok(DeformOutput { output, offsets })
    }
}

/// Copies a trained convolution into a deformable layer whose offset
/// convolution is all zeros, so the result computes the same function.
pub fn convert_standard_to_deformable(
    conv: &Conv2dLayer,
    offset_groups: usize,
) -> Result<DeformableConvLayer> {
    check_groups("convert_standard_to_deformable", conv.in_channels(), offset_groups)?;
    let (kh, kw) = conv.kernel();
    let out = 2 * kh * kw * offset_groups;
    let offset = Conv2dLayer::new(
        Tensor::zeros([out, conv.in_channels(), kh, kw]),
        Tensor::zeros([out]),
        conv.params,
    )?;
    DeformableConvLayer::new(conv.clone(), offset, offset_groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn integer_coordinates_read_exact_pixels() {
        let plane: Vec<f64> = (0..20).map(|v| v as f64 * 1.5).collect();
        assert_eq!(bilinear(&plane, 4, 5, 2.0, 3.0), plane[2 * 5 + 3]);
    }

    #[test]
    fn center_of_2x2_patch_is_mean() {
        let plane = [1.0, 2.0, 7.0, -4.0];
        assert_eq!(bilinear(&plane, 2, 2, 0.5, 0.5), 1.5);
    }

    #[test]
    fn far_outside_is_zero_and_edge_uses_phantoms() {
        let plane = [4.0; 9];
        assert_eq!(bilinear(&plane, 3, 3, -1.0, 1.0), 0.0);
        assert_eq!(bilinear(&plane, 3, 3, 1.0, 3.0), 0.0);
        // half a pixel above the image: one real row, one phantom row
        assert_eq!(bilinear(&plane, 3, 3, -0.5, 1.0), 2.0);
        assert_eq!(bilinear_with_grad(&plane, 3, 3, 5.0, 5.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn conversion_rejects_bad_groups() {
        let conv = Conv2dLayer::new(
            Tensor::zeros([4, 6, 3, 3]),
            Tensor::zeros([4]),
            Conv2dParams::new(1, 1),
        )
        .unwrap();
        assert!(matches!(
            convert_standard_to_deformable(&conv, 4),
            Err(TensorError::Config { .. })
        ));
        assert!(convert_standard_to_deformable(&conv, 0).is_err());
    }

    #[test]
    fn converted_offset_channels_follow_group_count() {
        let input_layer = Conv2dLayer::new(
            Tensor::zeros([8, 3, 7, 7]),
            Tensor::zeros([8]),
            Conv2dParams::new(2, 3),
        )
        .unwrap();
        let d = convert_standard_to_deformable(&input_layer, 3).unwrap();
        assert_eq!(d.offset_channels(), 2 * 7 * 7 * 3);

        let inner = Conv2dLayer::new(
            Tensor::zeros([64, 64, 3, 3]),
            Tensor::zeros([64]),
            Conv2dParams::new(1, 1),
        )
        .unwrap();
        let d = convert_standard_to_deformable(&inner, 8).unwrap();
        assert_eq!(d.offset_channels(), 2 * 3 * 3 * 8);
        assert!(d.offset.weight.data().iter().all(|&v| v == 0.0));
        assert!(d.offset.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn converted_layer_matches_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let conv = Conv2dLayer::new(
            Tensor::uniform([5, 4, 3, 3], -1.0, 1.0, &mut rng),
            Tensor::uniform([5], -1.0, 1.0, &mut rng),
            Conv2dParams::new(2, 1),
        )
        .unwrap();
        let d = convert_standard_to_deformable(&conv, 2).unwrap();
        let x = Tensor::uniform([2, 4, 9, 7], -2.0, 2.0, &mut rng);
        let g = Graph::new();
        let xv = g.constant(x);
        let a = conv.forward(&g, xv).unwrap().value();
        let b = d.forward(&g, xv).unwrap().output.value();
        assert!(a.max_abs_diff(&b) <= 1e-10);
    }

    #[test]
    fn offset_shape_mismatch_is_reported() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros([1, 2, 5, 5]));
        let w = g.constant(Tensor::zeros([3, 2, 3, 3]));
        let off = g.constant(Tensor::zeros([1, 17, 3, 3]));
        let err = deform_conv2d(x, off, w, None, Conv2dParams::default(), 1).unwrap_err();
        assert!(matches!(
            err,
            TensorError::DimMismatch {
                axis: "offset channels",
                expected: 18,
                ..
            }
        ));
    }
}
