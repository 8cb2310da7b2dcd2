use super::super::gemm::gemm;
use super::super::{Result, Tensor, TensorError, Var};

/// Affine map `input · weightᵀ + bias` with `input [N,D]`, `weight [O,D]`,
/// `bias [O]`.
pub fn linear<'g>(input: Var<'g>, weight: Var<'g>, bias: Option<Var<'g>>) -> Result<Var<'g>> {
    let (x, w) = (input.value(), weight.value());
    x.expect_rank("linear", 2)?;
    w.expect_rank("linear", 2)?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    if w.shape()[1] != d {
        return Err(TensorError::DimMismatch {
            op: "linear",
            axis: "in_features",
            expected: w.shape()[1],
            actual: d,
        });
    }
    let b = bias.map(|b| b.value());
    if let Some(b) = &b {
        if b.shape() != [o] {
            return Err(TensorError::DimMismatch {
                op: "linear",
                axis: "out_features",
                expected: o,
                actual: b.len(),
            });
        }
    }
    let mut out = vec![0.0; n * o];
    gemm(n, d, o, x.data(), false, w.data(), true, &mut out, false);
    if let Some(b) = &b {
        for row in out.chunks_mut(o.max(1)) {
            row.iter_mut().zip(b.data()).for_each(|(v, b)| *v += b);
        }
    }
    let out = Tensor::new([n, o], out)?;

    let mut parents = vec![input, weight];
    parents.extend(bias);
    Ok(input.graph().record(
        out,
        &parents,
        Box::new(move |args| {
            let (x, w) = (&args.inputs[0], &args.inputs[1]);
            let g = args.grad.data();
            let dx = args.needs[0].then(|| {
                let mut dx = vec![0.0; n * d];
                gemm(n, o, d, g, false, w.data(), false, &mut dx, false);
                Tensor::new([n, d], dx).expect("input shape")
            });
            let dw = args.needs[1].then(|| {
                let mut dw = vec![0.0; o * d];
                gemm(o, n, d, g, true, x.data(), false, &mut dw, false);
                Tensor::new([o, d], dw).expect("weight shape")
            });
            let mut grads = vec![dx, dw];
            if args.inputs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    let mut db = vec![0.0; o];
                    for row in g.chunks(o.max(1)) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    Tensor::new([o], db).expect("bias shape")
                }));
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    #[test]
    fn identity_weight_zero_bias_is_identity() {
        let g = Graph::new();
        let x = Tensor::new([2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        let mut eye = Tensor::zeros([3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let out = linear(
            g.constant(x.clone()),
            g.constant(eye),
            Some(g.constant(Tensor::zeros([3]))),
        )
        .unwrap();
        assert_eq!(*out.value(), x);
    }

    #[test]
    fn zero_weight_gives_bias_rows() {
        let g = Graph::new();
        let b = Tensor::new([2], vec![4.0, -1.0]).unwrap();
        let out = linear(
            g.constant(Tensor::ones([3, 5])),
            g.constant(Tensor::zeros([2, 5])),
            Some(g.constant(b.clone())),
        )
        .unwrap();
        for row in out.value().data().chunks(2) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn feature_mismatch_names_axis() {
        let g = Graph::new();
        let err = linear(
            g.constant(Tensor::ones([3, 5])),
            g.constant(Tensor::zeros([2, 4])),
            None,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            TensorError::DimMismatch {
                axis: "in_features",
                ..
            }
        ));
    }
}
