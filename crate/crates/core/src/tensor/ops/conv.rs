use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::super::gemm::gemm;
use super::super::{Result, Tensor, TensorError, Var};

/// Stride and zero padding shared by both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
        }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

/// `floor((size + 2·padding − kernel) / stride) + 1`, or `None` when the
/// kernel does not fit into the padded input.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (stride > 0 && kernel <= padded && kernel > 0).then(|| (padded - kernel) / stride + 1)
}

/// Resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub fn resolve(
        op: &'static str,
        input: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
        params: Conv2dParams,
    ) -> Result<Self> {
        if input.len() != 4 {
            return Err(TensorError::Rank {
                op,
                expected: 4,
                shape: input.to_vec(),
            });
        }
        if weight.len() != 4 {
            return Err(TensorError::Rank {
                op,
                expected: 4,
                shape: weight.to_vec(),
            });
        }
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (f, wc, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if wc != c {
            return Err(TensorError::DimMismatch {
                op,
                axis: "in_channels",
                expected: wc,
                actual: c,
            });
        }
        if let Some(b) = bias {
            if b != [f] {
                return Err(TensorError::DimMismatch {
                    op,
                    axis: "out_channels",
                    expected: f,
                    actual: b.iter().product(),
                });
            }
        }
        if params.stride == 0 {
            return Err(TensorError::Config {
                op,
                reason: "stride must be at least 1".into(),
            });
        }
        let ho = conv_output_size(h, kh, params.stride, params.padding).ok_or(
            TensorError::WindowTooLarge {
                op,
                window: kh,
                extent: h + 2 * params.padding,
            },
        )?;
        let wo = conv_output_size(w, kw, params.stride, params.padding).ok_or(
            TensorError::WindowTooLarge {
                op,
                window: kw,
                extent: w + 2 * params.padding,
            },
        )?;
        Ok(Self {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride: params.stride,
            pad: params.padding,
            ho,
            wo,
        })
    }

    pub fn kernel_points(&self) -> usize {
        self.kh * self.kw
    }

    /// Rows of the column matrix: `C·kH·kW`.
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    pub fn in_plane(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn out_plane(&self) -> usize {
        self.f * self.ho * self.wo
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.f, self.ho, self.wo]
    }

    /// Undeformed input coordinate read by kernel tap `(ky, kx)` at output
    /// position `(oy, ox)`; may be negative inside the padding.
    #[inline]
    pub fn base_coord(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> (isize, isize) {
        (
            (oy * self.stride + ky) as isize - self.pad as isize,
            (ox * self.stride + kx) as isize - self.pad as isize,
        )
    }
}

/// Unfolds one image `[C,H,W]` into `[C·kH·kW, H'·W']`.
pub(crate) fn im2col(geo: &ConvGeometry, image: &[f64], cols: &mut [f64]) {
    let p = geo.out_pixels();
    for c in 0..geo.c {
        let plane = &image[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let row = (c * geo.kh + ky) * geo.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..geo.ho {
                    for ox in 0..geo.wo {
                        let (y, x) = geo.base_coord(oy, ox, ky, kx);
                        dst[oy * geo.wo + ox] = if y >= 0
                            && x >= 0
                            && (y as usize) < geo.h
                            && (x as usize) < geo.w
                        {
                            plane[y as usize * geo.w + x as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into an image, accumulating.
pub(crate) fn col2im(geo: &ConvGeometry, cols: &[f64], image: &mut [f64]) {
    let p = geo.out_pixels();
    for c in 0..geo.c {
        let plane = &mut image[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let row = (c * geo.kh + ky) * geo.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..geo.ho {
                    for ox in 0..geo.wo {
                        let (y, x) = geo.base_coord(oy, ox, ky, kx);
                        if y >= 0 && x >= 0 && (y as usize) < geo.h && (x as usize) < geo.w {
                            plane[y as usize * geo.w + x as usize] += src[oy * geo.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out_i = W · cols_i + b` for every image, columns supplied by `unfold`.
pub(crate) fn forward_with_columns<F>(
    geo: &ConvGeometry,
    weight: &[f64],
    bias: Option<&[f64]>,
    unfold: F,
) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let (rows, p) = (geo.col_rows(), geo.out_pixels());
    let mut out = vec![0.0; geo.n * geo.out_plane()];
    out.par_chunks_mut(geo.out_plane().max(1))
        .enumerate()
        .for_each(|(i, out_i)| {
            let mut cols = vec![0.0; rows * p];
            unfold(i, &mut cols);
            gemm(geo.f, rows, p, weight, false, &cols, false, out_i, false);
            if let Some(b) = bias {
                for (f, row) in out_i.chunks_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v += b[f]);
                }
            }
        });
    out
}

/// Weight gradient `Σ_i gout_i · cols_iᵀ`, reduced in image order.
pub(crate) fn weight_grad_with_columns<F>(geo: &ConvGeometry, grad_out: &[f64], unfold: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let (rows, p) = (geo.col_rows(), geo.out_pixels());
    let partials: Vec<Vec<f64>> = (0..geo.n)
        .into_par_iter()
        .map(|i| {
            let mut cols = vec![0.0; rows * p];
            unfold(i, &mut cols);
            let g = &grad_out[i * geo.out_plane()..(i + 1) * geo.out_plane()];
            let mut dw = vec![0.0; geo.f * rows];
            gemm(geo.f, p, rows, g, false, &cols, true, &mut dw, false);
            dw
        })
        .collect();
    let mut dw = vec![0.0; geo.f * rows];
    for part in partials {
        for (a, b) in dw.iter_mut().zip(part) {
            *a += b;
        }
    }
    dw
}

pub(crate) fn bias_grad(geo: &ConvGeometry, grad_out: &[f64]) -> Vec<f64> {
    let p = geo.out_pixels();
    let mut db = vec![0.0; geo.f];
    for i in 0..geo.n {
        let g = &grad_out[i * geo.out_plane()..(i + 1) * geo.out_plane()];
        for (f, row) in g.chunks(p.max(1)).enumerate().take(geo.f) {
            db[f] += row.iter().sum::<f64>();
        }
    }
    db
}

/// Column gradient `Wᵀ · gout_i` for image `i`.
pub(crate) fn column_grad(geo: &ConvGeometry, weight: &[f64], grad_out_i: &[f64]) -> Vec<f64> {
    let (rows, p) = (geo.col_rows(), geo.out_pixels());
    let mut dcols = vec![0.0; rows * p];
    gemm(rows, geo.f, p, weight, true, grad_out_i, false, &mut dcols, false);
    dcols
}

/// 2D cross-correlation with zero padding. `input [N,C,H,W]`,
/// `weight [F,C,kH,kW]`, optional `bias [F]`.
pub fn conv2d<'g>(
    input: Var<'g>,
    weight: Var<'g>,
    bias: Option<Var<'g>>,
    params: Conv2dParams,
) -> Result<Var<'g>> {
    let (x, w) = (input.value(), weight.value());
    let b = bias.map(|b| b.value());
    let geo = ConvGeometry::resolve(
        "conv2d",
        x.shape(),
        w.shape(),
        b.as_ref().map(|b| b.shape()),
        params,
    )?;
    let xd = x.data();
    let out = forward_with_columns(&geo, w.data(), b.as_ref().map(|b| b.data()), |i, cols| {
        im2col(&geo, &xd[i * geo.in_plane()..(i + 1) * geo.in_plane()], cols)
    });
    let out = Tensor::new(geo.output_shape(), out)?;

    let mut parents = vec![input, weight];
    parents.extend(bias);
    Ok(input.graph().record(
        out,
        &parents,
        Box::new(move |args| {
            let (x, w) = (&args.inputs[0], &args.inputs[1]);
            let g = args.grad.data();
            let (xd, wd) = (x.data(), w.data());
            let dx = args.needs[0].then(|| {
                let mut dx = vec![0.0; xd.len()];
                dx.par_chunks_mut(geo.in_plane().max(1))
                    .enumerate()
                    .for_each(|(i, dx_i)| {
                        let gi = &g[i * geo.out_plane()..(i + 1) * geo.out_plane()];
                        let dcols = column_grad(&geo, wd, gi);
                        col2im(&geo, &dcols, dx_i);
                    });
                Tensor::new(x.shape().to_vec(), dx).expect("input shape")
            });
            let dw = args.needs[1].then(|| {
                let dw = weight_grad_with_columns(&geo, g, |i, cols| {
                    im2col(&geo, &xd[i * geo.in_plane()..(i + 1) * geo.in_plane()], cols)
                });
                Tensor::new(w.shape().to_vec(), dw).expect("weight shape")
            });
            let mut grads = vec![dx, dw];
            if args.inputs.len() == 3 {
                grads.push(
                    args.needs[2]
                        .then(|| Tensor::new([geo.f], bias_grad(&geo, g)).expect("bias shape")),
                );
            }
            grads
        }),
    ))
}
