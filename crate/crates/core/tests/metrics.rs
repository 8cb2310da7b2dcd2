//! NMSE identities, the fused loss against an independent composition of
//! primitive ops, and whole-split evaluation.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use traitnet::data::Trait;
use traitnet::gradcheck::GradCheck;
use traitnet::metrics::{nmse, nmse_loss, per_trait_mse, per_trait_nmse, EvalBatch, EvaluationReport};
use traitnet::tensor::{ops, Graph, Tensor};

fn random_batch(n: usize, m: usize, seed: u64) -> EvalBatch {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    EvalBatch::new(
        Tensor::uniform([n, m], 0.5, 40.0, &mut r),
        Tensor::uniform([n, m], 0.0, 45.0, &mut r),
        Trait::ALL[..m].to_vec(),
    )
    .unwrap()
}

/// Direct transcription of the definition with explicit loops.
fn oracle_nmse(gt: &[Vec<f64>], p: &[Vec<f64>]) -> f64 {
    let m = gt[0].len();
    (0..m)
        .map(|j| {
            let num: f64 = gt.iter().zip(p).map(|(g, q)| (g[j] - q[j]).powi(2)).sum();
            let den: f64 = gt.iter().map(|g| g[j] * g[j]).sum();
            num / den
        })
        .sum()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
}

fn column(b: &EvalBatch, j: usize) -> EvalBatch {
    let pick = |t: &Tensor| {
        let m = t.shape()[1];
        Tensor::new([t.shape()[0], 1], t.data().iter().skip(j).step_by(m).copied().collect()).unwrap()
    };
    EvalBatch::new(pick(b.gt()), pick(b.predictions()), vec![b.traits()[j]]).unwrap()
}

#[test]
fn matches_loop_oracle_and_recomputed_mse() {
    for seed in 0..10 {
        let b = random_batch(7, 5, seed);
        let want = oracle_nmse(&rows(b.gt()), &rows(b.predictions()));
        assert!((nmse(&b).unwrap() - want).abs() < 1e-12);
        let mse = per_trait_mse(&b);
        for j in 0..5 {
            let direct: f64 = rows(b.gt())
                .iter()
                .zip(rows(b.predictions()))
                .map(|(g, p)| (g[j] - p[j]).powi(2))
                .sum::<f64>()
                / 7.0;
            assert!((mse[j] - direct).abs() < 1e-12);
        }
    }
}

#[test]
fn prediction_of_zero_gives_m_exactly() {
    for m in 1..=5 {
        let b = random_batch(6, m, m as u64);
        let zeros = EvalBatch::new(b.gt().clone(), Tensor::zeros([6, m]), b.traits().to_vec()).unwrap();
        assert_eq!(nmse(&zeros).unwrap(), m as f64);
    }
}

proptest! {
    #[test]
    fn additive_over_traits(seed in any::<u64>(), n in 1usize..20, m in 1usize..=5) {
        let b = random_batch(n, m, seed);
        let split_sum: f64 = (0..m).map(|j| nmse(&column(&b, j)).unwrap()).sum();
        prop_assert!((nmse(&b).unwrap() - split_sum).abs() < 1e-12);
    }

    #[test]
    fn invariant_to_joint_per_trait_scaling(seed in any::<u64>(), n in 1usize..20, scale in 1e-3f64..1e3) {
        let b = random_batch(n, 5, seed);
        let scales: Vec<f64> = (0..5).map(|j| scale.powf(j as f64 / 4.0)).collect();
        let rescale = |t: &Tensor| {
            Tensor::new(t.shape().to_vec(), t.data().iter().enumerate().map(|(k, v)| v * scales[k % 5]).collect()).unwrap()
        };
        let scaled = EvalBatch::new(rescale(b.gt()), rescale(b.predictions()), b.traits().to_vec()).unwrap();
        let (a, c) = (per_trait_nmse(&b).unwrap(), per_trait_nmse(&scaled).unwrap());
        for j in 0..5 {
            prop_assert!((a[j] - c[j]).abs() < 1e-12 * a[j].max(1.0));
        }
    }
}

#[test]
fn fused_loss_matches_composed_primitives_in_value_and_gradient() {
    let b = random_batch(6, 5, 42);
    let (gt, p) = (b.gt().clone(), b.predictions().clone());

    let g1 = Graph::new();
    let x1 = g1.param(p.clone());
    let fused = nmse_loss(x1, &gt, b.traits()).unwrap();
    g1.backward(fused).unwrap();

    // route two: Σ (p − gt)² ⊙ W with W_ij = 1 / Σ_i gt_ij²
    let g2 = Graph::new();
    let x2 = g2.param(p);
    let energy: Vec<f64> = (0..5)
        .map(|j| gt.data().iter().skip(j).step_by(5).map(|v| v * v).sum())
        .collect();
    let w = Tensor::new([6, 5], (0..30).map(|k| 1.0 / energy[k % 5]).collect()).unwrap();
    let diff = ops::add(x2, g2.constant(gt.map(|v| -v))).unwrap();
    let composed = ops::sum(ops::mul(ops::mul(diff, diff).unwrap(), g2.constant(w)).unwrap());
    g2.backward(composed).unwrap();

    let (v1, v2) = (fused.value().item().unwrap(), composed.value().item().unwrap());
    assert!((v1 - v2).abs() < 1e-12, "{v1} vs {v2}");
    assert!(x1.grad().unwrap().max_abs_diff(&x2.grad().unwrap()) < 1e-12);
}

#[test]
fn fused_loss_passes_finite_differences() {
    let b = random_batch(4, 3, 7);
    let gt = b.gt().clone();
    let traits = b.traits().to_vec();
    let report = GradCheck::default()
        .run(&[b.predictions().clone()], |_, v| Ok(nmse_loss(v[0], &gt, &traits).unwrap()))
        .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn whole_split_differs_from_batch_average_and_report_uses_whole_split() {
    // skewed ground truth: a low-energy batch and a high-energy batch
    let gt = Tensor::new([4, 1], vec![1.0, 1.0, 100.0, 100.0]).unwrap();
    let p = Tensor::new([4, 1], vec![2.0, 2.0, 90.0, 90.0]).unwrap();
    let whole = EvalBatch::new(gt.clone(), p.clone(), vec![Trait::Height]).unwrap();
    let half = |lo: usize| {
        let t = |x: &Tensor| Tensor::new([2, 1], x.data()[lo..lo + 2].to_vec()).unwrap();
        nmse(&EvalBatch::new(t(&gt), t(&p), vec![Trait::Height]).unwrap()).unwrap()
    };
    let averaged = (half(0) + half(2)) / 2.0;
    let whole_value = nmse(&whole).unwrap();
    assert!((averaged - whole_value).abs() > 0.1);
    let report = EvaluationReport::from_batch("test", &whole, "h").unwrap();
    assert_eq!(report.nmse, whole_value);
    assert_eq!(report.mse["height"], (1.0 + 1.0 + 100.0 + 100.0) / 4.0);
}

#[test]
fn single_perfect_sample_reports_zero() {
    let gt = Tensor::new([1, 5], vec![3.0, 0.2, 4.0, 8.0, 30.0]).unwrap();
    let b = EvalBatch::new(gt.clone(), gt, Trait::ALL.to_vec()).unwrap();
    let r = EvaluationReport::from_batch("val", &b, "h").unwrap();
    assert_eq!(r.nmse, 0.0);
    assert!(r.mse.values().all(|&v| v == 0.0));
}
