use super::super::{Result, Tensor, TensorError, Var};

/// Weight of the current batch in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.1;
/// Added to the variance before the square root.
pub const BN_EPS: f64 = 1e-5;

pub enum BatchNormMode<'a> {
    /// Normalize with batch statistics and report them.
    Train,
    /// Affine transform with stored running statistics.
    Eval {
        running_mean: &'a [f64],
        running_var: &'a [f64],
    },
}

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Unbiased (n−1) variance, used for the running estimate.
    pub var: Vec<f64>,
}

impl BatchMoments {
    pub fn update_running(&self, running_mean: &mut [f64], running_var: &mut [f64]) {
        for (r, m) in running_mean.iter_mut().zip(&self.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in running_var.iter_mut().zip(&self.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

/// Batch normalization over `[N,C,H,W]` with per-channel `gamma`, `beta`.
pub fn batch_norm2d<'g>(
    input: Var<'g>,
    gamma: Var<'g>,
    beta: Var<'g>,
    mode: BatchNormMode<'_>,
) -> Result<(Var<'g>, Option<BatchMoments>)> {
    let x = input.value();
    x.expect_rank("batch_norm2d", 4)?;
    let &[n, c, h, w] = x.shape() else {
        unreachable!()
    };
    let (gv, bv) = (gamma.value(), beta.value());
    for t in [&gv, &bv] {
        if t.shape() != [c] {
            return Err(TensorError::DimMismatch {
                op: "batch_norm2d",
                axis: "channels",
                expected: c,
                actual: t.len(),
            });
        }
    }
    let hw = h * w;
    let count = n * hw;
    let xd = x.data();
    let channel = move |ch: usize| {
        (0..n).flat_map(move |i| {
            let start = (i * c + ch) * hw;
            start..start + hw
        })
    };

    let (mean, var, moments) = match mode {
        BatchNormMode::Train => {
            if count < 2 {
                return Err(TensorError::Config {
                    op: "batch_norm2d",
                    reason: "training mode needs more than one value per channel".into(),
                });
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let m = channel(ch).map(|i| xd[i]).sum::<f64>() / count as f64;
                let v = channel(ch).map(|i| (xd[i] - m).powi(2)).sum::<f64>() / count as f64;
                mean[ch] = m;
                var[ch] = v;
            }
            let unbiased = var
                .iter()
                .map(|v| v * count as f64 / (count - 1) as f64)
                .collect();
            let moments = BatchMoments {
                mean: mean.clone(),
                var: unbiased,
            };
            (mean, var, Some(moments))
        }
        BatchNormMode::Eval {
            running_mean,
            running_var,
        } => {
            if running_mean.len() != c || running_var.len() != c {
                return Err(TensorError::DimMismatch {
                    op: "batch_norm2d",
                    axis: "running_stats",
                    expected: c,
                    actual: running_mean.len().min(running_var.len()),
                });
            }
            (running_mean.to_vec(), running_var.to_vec(), None)
        }
    };
    let train = moments.is_some();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    for ch in 0..c {
        for i in channel(ch) {
            let z = (xd[i] - mean[ch]) * inv_std[ch];
            xhat[i] = z;
            out[i] = gv.data()[ch] * z + bv.data()[ch];
        }
    }
    let out = Tensor::new(x.shape().to_vec(), out)?;
    let var_out = input.graph().record(
        out,
        &[input, gamma, beta],
        Box::new(move |args| {
            let g = args.grad.data();
            let gamma = args.inputs[1].data();
            let mut dx = vec![0.0; g.len()];
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for ch in 0..c {
                let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                for i in channel(ch) {
                    sum_g += g[i];
                    sum_gx += g[i] * xhat[i];
                }
                dgamma[ch] = sum_gx;
                dbeta[ch] = sum_g;
                if !args.needs[0] {
                    continue;
                }
                let k = gamma[ch] * inv_std[ch];
                if train {
                    let m = count as f64;
                    for i in channel(ch) {
                        dx[i] = k / m * (m * g[i] - sum_g - xhat[i] * sum_gx);
                    }
                } else {
                    for i in channel(ch) {
                        dx[i] = k * g[i];
                    }
                }
            }
            vec![
                args.needs[0]
                    .then(|| Tensor::new(args.inputs[0].shape().to_vec(), dx).expect("shape")),
                args.needs[1].then(|| Tensor::new([c], dgamma).expect("shape")),
                args.needs[2].then(|| Tensor::new([c], dbeta).expect("shape")),
            ]
        }),
    );
    Ok((var_out, moments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;
    use rand::SeedableRng;

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform([2, 3, 4, 4], -2.0, 2.0, &mut rng);
        let g = Graph::new();
        let (y, moments) = batch_norm2d(
            g.constant(x.clone()),
            g.constant(Tensor::ones([3])),
            g.constant(Tensor::zeros([3])),
            BatchNormMode::Eval {
                running_mean: &[0.0; 3],
                running_var: &[1.0; 3],
            },
        )
        .unwrap();
        assert!(moments.is_none());
        // 1/sqrt(1 + eps) scaling is the only deviation
        assert!(y.value().max_abs_diff(&x) < 1e-4);
        let scaled = x.map(|v| v / (1.0 + BN_EPS).sqrt());
        assert!(y.value().max_abs_diff(&scaled) < 1e-15);
    }

    #[test]
    fn train_mode_standardizes_channels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform([3, 2, 3, 3], -5.0, 9.0, &mut rng);
        let g = Graph::new();
        let (y, moments) = batch_norm2d(
            g.constant(x),
            g.constant(Tensor::ones([2])),
            g.constant(Tensor::zeros([2])),
            BatchNormMode::Train,
        )
        .unwrap();
        assert!(moments.is_some());
        let y = y.value();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|i| y.data()[(i * 2 + ch) * 9..(i * 2 + ch + 1) * 9].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn running_update_uses_momentum() {
        let moments = BatchMoments {
            mean: vec![1.0],
            var: vec![3.0],
        };
        let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
        moments.update_running(&mut rm, &mut rv);
        assert!((rm[0] - 0.1).abs() < 1e-15);
        assert!((rv[0] - 1.2).abs() < 1e-15);
    }
}
