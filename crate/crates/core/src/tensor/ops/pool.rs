use super::super::{Result, Tensor, TensorError, Var};
use super::conv::conv_output_size;

/// Max pooling over `kernel×kernel` windows. Padding cells never win.
/// Ties route the gradient to the first maximum in scan order.
pub fn max_pool2d(input: Var<'_>, kernel: usize, stride: usize, padding: usize) -> Result<Var<'_>> {
    let x = input.value();
    x.expect_rank("max_pool2d", 4)?;
    let &[n, c, h, w] = x.shape() else {
        unreachable!()
    };
    if stride == 0 || kernel == 0 || 2 * padding > kernel {
        return Err(TensorError::Config {
            op: "max_pool2d",
            reason: format!(
                "kernel {kernel}, stride {stride}, padding {padding}: need kernel, stride ≥ 1 and padding ≤ kernel/2"
            ),
        });
    }
    let too_large = |extent| TensorError::WindowTooLarge {
        op: "max_pool2d",
        window: kernel,
        extent,
    };
    let ho = conv_output_size(h, kernel, stride, padding).ok_or(too_large(h + 2 * padding))?;
    let wo = conv_output_size(w, kernel, stride, padding).ok_or(too_large(w + 2 * padding))?;

    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ky in 0..kernel {
                    let y = (oy * stride + ky) as isize - padding as isize;
                    if y < 0 || y as usize >= h {
                        continue;
                    }
                    for kx in 0..kernel {
                        let xx = (ox * stride + kx) as isize - padding as isize;
                        if xx < 0 || xx as usize >= w {
                            continue;
                        }
                        let idx = base + y as usize * w + xx as usize;
                        if xd[idx] > best || xd[idx].is_nan() || best_idx == usize::MAX {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let out = Tensor::new([n, c, ho, wo], out)?;
    let len = xd.len();
    Ok(input.graph().record(
        out,
        &[input],
        Box::new(move |args| {
            let mut dx = vec![0.0; len];
            for (&idx, &g) in argmax.iter().zip(args.grad.data()) {
                dx[idx] += g;
            }
            vec![Some(
                Tensor::new(args.inputs[0].shape().to_vec(), dx).expect("input shape"),
            )]
        }),
    ))
}

/// Spatial mean: `[N,C,H,W] → [N,C]`.
pub fn global_avg_pool(input: Var<'_>) -> Result<Var<'_>> {
    let x = input.value();
    x.expect_rank("global_avg_pool", 4)?;
    let &[n, c, h, w] = x.shape() else {
        unreachable!()
    };
    let hw = h * w;
    if hw == 0 {
        return Err(TensorError::WindowTooLarge {
            op: "global_avg_pool",
            window: 1,
            extent: 0,
        });
    }
    let out: Vec<f64> = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    let out = Tensor::new([n, c], out)?;
    Ok(input.graph().record(
        out,
        &[input],
        Box::new(move |args| {
            let mut dx = Vec::with_capacity(n * c * hw);
            for &g in args.grad.data() {
                dx.extend(std::iter::repeat_n(g / hw as f64, hw));
            }
            vec![Some(
                Tensor::new(args.inputs[0].shape().to_vec(), dx).expect("input shape"),
            )]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    #[test]
    fn max_pool_picks_window_max() {
        let g = Graph::new();
        let x = g.constant(Tensor::new([1, 1, 2, 2], vec![1.0, 5.0, -3.0, 2.0]).unwrap());
        let y = max_pool2d(x, 2, 2, 0).unwrap();
        assert_eq!(y.value().data(), &[5.0]);
    }

    #[test]
    fn window_larger_than_input_is_rejected() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros([1, 1, 2, 2]));
        assert!(matches!(
            max_pool2d(x, 3, 1, 0),
            Err(TensorError::WindowTooLarge { window: 3, .. })
        ));
    }

    #[test]
    fn resnet_stem_pool_shape() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros([2, 4, 32, 32]));
        assert_eq!(max_pool2d(x, 3, 2, 1).unwrap().shape(), vec![2, 4, 16, 16]);
    }

    #[test]
    fn global_pool_averages() {
        let g = Graph::new();
        let x = g.constant(Tensor::new([1, 2, 1, 2], vec![1.0, 3.0, -2.0, 4.0]).unwrap());
        assert_eq!(global_avg_pool(x).unwrap().value().data(), &[2.0, 1.0]);
    }
}
