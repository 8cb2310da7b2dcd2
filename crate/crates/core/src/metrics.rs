//! Normalized mean squared error and per-trait MSE.
//!
//! For ground truth `gt` and predictions `p` of shape `[n, m]`:
//! `NMSE = Σ_j Σ_i (gt_ij − p_ij)² / Σ_i gt_ij²`. Each trait is scaled by its
//! own energy, so traits of very different magnitude can share one loss.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Sample, SampleSet, Trait};
use crate::model::{Model, ModelError, ModelInput};
use crate::tensor::{Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ground truth {gt:?} and predictions {p:?} differ in shape")]
    Shape { gt: Vec<usize>, p: Vec<usize> },
    #[error("{traits} trait names for {columns} columns")]
    TraitCount { traits: usize, columns: usize },
    #[error("ground truth for {0} is all zero; NMSE is undefined")]
    ZeroGroundTruth(Trait),
    #[error("cannot evaluate an empty split")]
    EmptySplit,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Ground truth and predictions `[n, m]` with one trait per column.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBatch {
    gt: Tensor,
    p: Tensor,
    traits: Vec<Trait>,
}

impl EvalBatch {
    pub fn new(gt: Tensor, p: Tensor, traits: Vec<Trait>) -> Result<Self> {
        if gt.shape() != p.shape() || gt.rank() != 2 {
            return Err(MetricsError::Shape {
                gt: gt.shape().to_vec(),
                p: p.shape().to_vec(),
            });
        }
        if traits.len() != gt.shape()[1] {
            return Err(MetricsError::TraitCount {
                traits: traits.len(),
                columns: gt.shape()[1],
            });
        }
        Ok(Self { gt, p, traits })
    }

    pub fn n(&self) -> usize {
        self.gt.shape()[0]
    }

    pub fn m(&self) -> usize {
        self.gt.shape()[1]
    }

    pub fn traits(&self) -> &[Trait] {
        &self.traits
    }

    pub fn gt(&self) -> &Tensor {
        &self.gt
    }

    pub fn predictions(&self) -> &Tensor {
        &self.p
    }

    /// `(Σ_i (gt − p)², Σ_i gt²)` for column `j`.
    fn column_sums(&self, j: usize) -> (f64, f64) {
        let m = self.m();
        (0..self.n()).fold((0.0, 0.0), |(err, energy), i| {
            let (g, p) = (self.gt.data()[i * m + j], self.p.data()[i * m + j]);
            (err + (g - p) * (g - p), energy + g * g)
        })
    }
}

/// Per-trait terms of the NMSE sum.
pub fn per_trait_nmse(batch: &EvalBatch) -> Result<Vec<f64>> {
    (0..batch.m())
        .map(|j| {
            let (err, energy) = batch.column_sums(j);
            if energy == 0.0 {
                Err(MetricsError::ZeroGroundTruth(batch.traits[j]))
            } else {
                Ok(err / energy)
            }
        })
        .collect()
}

pub fn nmse(batch: &EvalBatch) -> Result<f64> {
    Ok(per_trait_nmse(batch)?.iter().sum())
}

/// `MSE_j = (1/n) Σ_i (gt_ij − p_ij)²`.
pub fn per_trait_mse(batch: &EvalBatch) -> Vec<f64> {
    let n = batch.n().max(1) as f64;
    (0..batch.m()).map(|j| batch.column_sums(j).0 / n).collect()
}

/// NMSE of `pred [n, m]` against constant targets, as a graph node.
/// Gradient: `∂/∂p_ij = 2 (p_ij − gt_ij) / Σ_i gt_ij²`.
pub fn nmse_loss<'g>(pred: Var<'g>, gt: &Tensor, traits: &[Trait]) -> Result<Var<'g>> {
    let p = pred.value();
    let batch = EvalBatch::new(gt.clone(), (*p).clone(), traits.to_vec())?;
    let loss = nmse(&batch)?;
    let m = batch.m();
    let energy: Vec<f64> = (0..m).map(|j| batch.column_sums(j).1).collect();
    let gt = gt.clone();
    Ok(pred.graph().record(
        Tensor::scalar(loss),
        &[pred],
        Box::new(move |args| {
            let g = args.grad.data()[0];
            let p = &args.inputs[0];
            let data = p
                .data()
                .iter()
                .zip(gt.data())
                .enumerate()
                .map(|(k, (&pv, &gv))| g * 2.0 * (pv - gv) / energy[k % m])
                .collect();
            vec![Some(Tensor::new(p.shape().to_vec(), data).expect("same shape"))]
        }),
    ))
}

/// Targets `[n, |traits|]` of `samples`.
pub fn targets(samples: &[&Sample], traits: &[Trait]) -> Tensor {
    let data = samples.iter().flat_map(|s| s.traits.select(traits)).collect();
    Tensor::new([samples.len(), traits.len()], data).expect("target shape")
}

/// Whole-split evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub split: String,
    pub n: usize,
    pub nmse: f64,
    pub nmse_per_trait: IndexMap<String, f64>,
    pub mse: IndexMap<String, f64>,
    /// Hex SHA-256 of the run configuration that produced the model.
    pub config_hash: String,
}

impl EvaluationReport {
    pub fn from_batch(split: &str, batch: &EvalBatch, config_hash: &str) -> Result<Self> {
        if batch.n() == 0 {
            return Err(MetricsError::EmptySplit);
        }
        let names = || batch.traits.iter().map(|t| t.name().to_string());
        let per_trait = per_trait_nmse(batch)?;
        Ok(Self {
            split: split.to_string(),
            n: batch.n(),
            nmse: per_trait.iter().sum(),
            nmse_per_trait: names().zip(per_trait).collect(),
            mse: names().zip(per_trait_mse(batch)).collect(),
            config_hash: config_hash.to_string(),
        })
    }
}

/// Runs `model` over every sample of `set` (already normalized) in batches
/// and computes the metrics over the whole split at once.
pub fn evaluation_report(
    model: &Model,
    set: &dyn SampleSet,
    split: &str,
    batch_size: usize,
    config_hash: &str,
) -> Result<EvaluationReport> {
    let batch = predict_set(model, set, batch_size)?;
    EvaluationReport::from_batch(split, &batch, config_hash)
}

/// Predictions for every sample of `set`, paired with its targets.
pub fn predict_set(model: &Model, set: &dyn SampleSet, batch_size: usize) -> Result<EvalBatch> {
    if set.is_empty() {
        return Err(MetricsError::EmptySplit);
    }
    let cfg = model.config();
    let samples: Vec<&Sample> = (0..set.len()).map(|i| set.sample(i)).collect();
    let mut preds = Vec::with_capacity(samples.len() * cfg.outputs.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let out = model.predict(&ModelInput::from_samples(chunk, &cfg.inputs))?;
        preds.extend_from_slice(out.data());
    }
    let p = Tensor::new([samples.len(), cfg.outputs.len()], preds)?;
    EvalBatch::new(targets(&samples, &cfg.outputs), p, cfg.outputs.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(gt: &[f64], p: &[f64], m: usize) -> EvalBatch {
        let n = gt.len() / m;
        EvalBatch::new(
            Tensor::new([n, m], gt.to_vec()).unwrap(),
            Tensor::new([n, m], p.to_vec()).unwrap(),
            Trait::ALL[..m].to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn hand_evaluated_examples() {
        assert_eq!(nmse(&batch(&[1.0, 2.0], &[2.0, 2.0], 1)).unwrap(), 0.2);
        assert_eq!(per_trait_mse(&batch(&[3.0], &[1.0], 1)), vec![4.0]);
        let gt = [1.0, 5.0, 2.0, 7.0, 3.0, 9.0];
        assert_eq!(nmse(&batch(&gt, &gt, 2)).unwrap(), 0.0);
        assert_eq!(per_trait_mse(&batch(&gt, &gt, 2)), vec![0.0, 0.0]);
        assert_eq!(nmse(&batch(&gt, &[0.0; 6], 2)).unwrap(), 2.0);
    }

    #[test]
    fn zero_column_names_the_trait() {
        let b = batch(&[1.0, 0.0, 2.0, 0.0], &[1.0; 4], 2);
        assert!(matches!(nmse(&b), Err(MetricsError::ZeroGroundTruth(Trait::DryWeight))));
    }

    #[test]
    fn shape_and_name_checks() {
        let a = Tensor::zeros([2, 2]);
        assert!(EvalBatch::new(a.clone(), Tensor::zeros([2, 3]), Trait::ALL[..2].to_vec()).is_err());
        assert!(EvalBatch::new(a.clone(), a, Trait::ALL[..3].to_vec()).is_err());
    }

    #[test]
    fn report_serializes_in_trait_order() {
        let b = batch(&[1.0, 2.0, 3.0, 4.0], &[1.5, 2.0, 3.0, 3.0], 2);
        let r = EvaluationReport::from_batch("val", &b, "abc").unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.find("fresh_weight").unwrap() < json.find("dry_weight").unwrap());
        assert_eq!(serde_json::from_str::<EvaluationReport>(&json).unwrap(), r);
        assert_eq!(r.n, 2);
    }
}
