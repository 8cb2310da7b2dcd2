use super::super::{Result, Tensor, TensorError, Var};

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(TensorError::Rank {
            op,
            expected: a.len(),
            shape: b.to_vec(),
        });
    }
    if let Some((&x, &y)) = a.iter().zip(b).find(|(x, y)| x != y) {
        return Err(TensorError::DimMismatch {
            op,
            axis: "elementwise",
            expected: x,
            actual: y,
        });
    }
    Ok(())
}

pub fn add<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let (av, bv) = (a.value(), b.value());
    same_shape("add", av.shape(), bv.shape())?;
    let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
    let out = Tensor::new(av.shape().to_vec(), data)?;
    Ok(a.graph().record(
        out,
        &[a, b],
        Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.clone())]),
    ))
}

pub fn mul<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let (av, bv) = (a.value(), b.value());
    same_shape("mul", av.shape(), bv.shape())?;
    let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
    let out = Tensor::new(av.shape().to_vec(), data)?;
    Ok(a.graph().record(
        out,
        &[a, b],
        Box::new(|args| {
            let (x, y) = (&args.inputs[0], &args.inputs[1]);
            let g = args.grad.data();
            let prod = |other: &Tensor| {
                let data = g.iter().zip(other.data()).map(|(g, o)| g * o).collect();
                Tensor::new(other.shape().to_vec(), data).expect("same shape")
            };
            vec![
                args.needs[0].then(|| prod(y)),
                args.needs[1].then(|| prod(x)),
            ]
        }),
    ))
}

pub fn scale(a: Var<'_>, factor: f64) -> Var<'_> {
    let out = a.value().map(|v| v * factor);
    a.graph().record(
        out,
        &[a],
        Box::new(move |args| vec![Some(args.grad.map(|g| g * factor))]),
    )
}

pub fn relu(a: Var<'_>) -> Var<'_> {
    // NaN passes through so divergence is not masked
    let out = a.value().map(|v| if v > 0.0 || v.is_nan() { v } else { 0.0 });
    a.graph().record(
        out,
        &[a],
        Box::new(|args| {
            let data = args
                .grad
                .data()
                .iter()
                .zip(args.output.data())
                .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
                .collect();
            vec![Some(
                Tensor::new(args.grad.shape().to_vec(), data).expect("same shape"),
            )]
        }),
    )
}

/// Sum of all elements, as a scalar.
pub fn sum(a: Var<'_>) -> Var<'_> {
    let out = Tensor::scalar(a.value().data().iter().sum());
    a.graph().record(
        out,
        &[a],
        Box::new(|args| {
            let g = args.grad.data()[0];
            vec![Some(Tensor::full(args.inputs[0].shape().to_vec(), g))]
        }),
    )
}

pub fn mean(a: Var<'_>) -> Var<'_> {
    let n = a.value().len().max(1) as f64;
    scale(sum(a), 1.0 / n)
}

pub fn reshape(a: Var<'_>, shape: impl Into<Vec<usize>>) -> Result<Var<'_>> {
    let out = (*a.value()).clone().reshape(shape)?;
    Ok(a.graph().record(
        out,
        &[a],
        Box::new(|args| {
            vec![Some(
                args.grad
                    .clone()
                    .reshape(args.inputs[0].shape().to_vec())
                    .expect("same length"),
            )]
        }),
    ))
}

/// Concatenation along axis 1 (the channel axis for `[N, C, ...]`).
pub fn concat<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let Some(first) = parts.first() else {
        return Err(TensorError::Config {
            op: "concat",
            reason: "nothing to concatenate".into(),
        });
    };
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let ref_shape = values[0].shape().to_vec();
    if ref_shape.len() < 2 {
        return Err(TensorError::Rank {
            op: "concat",
            expected: 2,
            shape: ref_shape,
        });
    }
    for v in &values[1..] {
        let s = v.shape();
        if s.len() != ref_shape.len() {
            return Err(TensorError::Rank {
                op: "concat",
                expected: ref_shape.len(),
                shape: s.to_vec(),
            });
        }
        for (axis, (&a, &b)) in ref_shape.iter().zip(s).enumerate() {
            if axis != 1 && a != b {
                return Err(TensorError::DimMismatch {
                    op: "concat",
                    axis: if axis == 0 { "batch" } else { "spatial" },
                    expected: a,
                    actual: b,
                });
            }
        }
    }
    let outer = ref_shape[0];
    let inner: usize = ref_shape[2..].iter().product();
    let widths: Vec<usize> = values.iter().map(|v| v.shape()[1] * inner).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (v, &w) in values.iter().zip(&widths) {
            data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = ref_shape.clone();
    shape[1] = values.iter().map(|v| v.shape()[1]).sum();
    let out = Tensor::new(shape, data)?;
    Ok(first.graph().record(
        out,
        parts,
        Box::new(move |args| {
            let g = args.grad.data();
            let mut grads: Vec<Vec<f64>> =
                widths.iter().map(|&w| Vec::with_capacity(outer * w)).collect();
            for o in 0..outer {
                let mut start = o * total;
                for (buf, &w) in grads.iter_mut().zip(&widths) {
                    buf.extend_from_slice(&g[start..start + w]);
                    start += w;
                }
            }
            grads
                .into_iter()
                .zip(args.inputs)
                .zip(args.needs)
                .map(|((buf, input), &need)| {
                    need.then(|| Tensor::new(input.shape().to_vec(), buf).expect("split"))
                })
                .collect()
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    #[test]
    fn relu_clamps_negatives() {
        let g = Graph::new();
        let x = g.constant(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap());
        assert_eq!(relu(x).value().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_keeps_nan() {
        let g = Graph::new();
        let x = g.constant(Tensor::new([2], vec![f64::NAN, -1.0]).unwrap());
        assert!(relu(x).value().data()[0].is_nan());
    }

    #[test]
    fn concat_channels() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3, 4, 4]));
        let b = g.constant(Tensor::ones([2, 5, 4, 4]));
        let c = concat(&[a, b]).unwrap();
        assert_eq!(c.shape(), vec![2, 8, 4, 4]);
        let v = c.value();
        // second image starts with a's zeros again
        assert_eq!(v.data()[8 * 16], 0.0);
        assert_eq!(v.data()[3 * 16], 1.0);
    }

    #[test]
    fn concat_rejects_mismatched_spatial_dims() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros([1, 3, 4, 4]));
        let b = g.constant(Tensor::zeros([1, 3, 4, 5]));
        assert!(matches!(
            concat(&[a, b]),
            Err(TensorError::DimMismatch { axis: "spatial", .. })
        ));
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([3, 2]));
        assert!(add(a, b).is_err());
    }
}
