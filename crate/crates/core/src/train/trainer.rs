use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::artifacts::{CheckpointMeta, RunDir, SplitIds};
use super::config::{Stream, TrainConfig};
use super::{Result, TrainError};
use crate::data::{
    augment, check_no_leakage, compute_stats, normalize, split, Dataset, NormalizationStats, Sample, SampleSet,
    Sampler, SplitSpec,
};
use crate::metrics::{evaluation_report, nmse_loss, targets, EvaluationReport};
use crate::model::{Model, ModelInput};
use crate::tensor::{Adam, AdamConfig, Graph, Parameter, Tensor};

/// One row of the learning curve. Epoch 0 is the untrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss; `None` for epoch 0.
    pub train_loss: Option<f64>,
    pub val_nmse: f64,
    /// Seconds since the start of the run.
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Always the minimum of `epochs[..].val_nmse`.
    pub best_val_nmse: f64,
    pub stopped_early: bool,
    pub best_checkpoint: Option<std::path::PathBuf>,
    /// Validation metrics of the best model.
    pub val_report: EvaluationReport,
    /// Held-out metrics of the best model; `None` without a test split.
    pub test_report: Option<EvaluationReport>,
    pub parameter_count: usize,
}

/// The result of a run: its record, the selected model and the metadata
/// stored with its checkpoint.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub model: Model,
    pub meta: CheckpointMeta,
}

/// A split dataset. Training samples stay raw so each batch can be
/// augmented before normalization; validation and test samples are
/// normalized once with the training statistics.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub stats: NormalizationStats,
    pub split: SplitIds,
}

/// Splits `dataset` and computes normalization statistics on the training
/// portion only.
pub fn prepare(config: &TrainConfig, dataset: &Dataset) -> Result<Prepared> {
    let ids = dataset.ids();
    let spec = SplitSpec {
        test_ids: config
            .split
            .test_ids
            .clone()
            .unwrap_or_else(|| dataset.manifest.test_ids.clone()),
        train_size: config.split.train_size,
        seed: config.seed,
        allow_empty_val: false,
    };
    let parts = split(&ids, &spec)?;
    let names = |idx: &[usize]| idx.iter().map(|&i| ids[i].clone()).collect::<Vec<_>>();
    let train: Vec<Sample> = parts.train.iter().map(|&i| dataset.samples[i].clone()).collect();
    let stats = compute_stats(&train.iter().collect::<Vec<_>>())?;
    check_no_leakage(&stats, parts.val.iter().chain(&parts.test).map(|&i| ids[i].as_str()))?;
    let norm = |idx: &[usize]| {
        idx.iter()
            .map(|&i| normalize(&dataset.samples[i], &stats))
            .collect::<Vec<_>>()
    };
    Ok(Prepared {
        val: norm(&parts.val),
        test: norm(&parts.test),
        split: SplitIds {
            train: names(&parts.train),
            val: names(&parts.val),
            test: names(&parts.test),
        },
        train,
        stats,
    })
}

/// Trains on `dataset` and, when `out_dir` is given, writes the run
/// directory there.
pub fn train(config: &TrainConfig, dataset: &Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let data = prepare(config, dataset)?;
    train_prepared(config, &data, &data.test, out_dir)
}

/// The training loop proper. `test` is read exactly once, by the final
/// evaluation of the selected model.
pub fn train_prepared(
    config: &TrainConfig,
    data: &Prepared,
    test: &dyn SampleSet,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.val.is_empty() {
        return Err(TrainError::Config("early stopping needs a non-empty validation split".into()));
    }
    let start = Instant::now();
    let hash = config.hash();
    let mut model = Model::build(&config.model)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let fresh: Vec<f64> = data.train.iter().map(|s| s.traits.fresh_weight).collect();
    let varieties: Vec<String> = data.train.iter().map(|s| s.variety.clone()).collect();
    let sampler = Sampler::new(config.sampler, &fresh, &varieties)?;
    let mut sample_rng = config.rng(Stream::Sampler);
    let mut augment_rng = config.rng(Stream::Augment);
    let mut run_dir = out_dir.map(|d| RunDir::create(d, config)).transpose()?;
    let meta_at = |epoch| CheckpointMeta {
        train_config: config.clone(),
        config_hash: hash.clone(),
        stats: data.stats.clone(),
        split: data.split.clone(),
        epoch,
    };
    let validate = |model: &Model| evaluation_report(model, &data.val, "val", config.eval_batch_size, &hash);

    let mut val_report = validate(&model)?;
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        val_nmse: val_report.nmse,
        wall_time_s: start.elapsed().as_secs_f64(),
    }];
    let mut best = (0, model.clone());
    let mut stale = 0;
    let mut stopped_early = false;
    if let Some(dir) = run_dir.as_mut() {
        dir.log_epoch(&epochs[0])?;
        dir.save_best(&model, &meta_at(0))?;
    }

    for epoch in 1..=config.max_epochs {
        let order = sampler.epoch(&mut sample_rng);
        let mut loss_sum = 0.0;
        let chunks = batches(&order, config.batch_size);
        for (b, idx) in chunks.iter().enumerate() {
            let batch: Vec<Sample> = idx
                .iter()
                .map(|&i| normalize(&augment(&data.train[i], &config.augment, &mut augment_rng), &data.stats))
                .collect();
            let loss = train_step(&mut model, &mut adam, &batch.iter().collect::<Vec<_>>(), config.grad_clip)?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            assert_eq!(adam.lr(), config.lr, "learning rate must stay constant");
            loss_sum += loss;
        }
        let report = validate(&model)?;
        let record = EpochRecord {
            epoch,
            train_loss: Some(loss_sum / chunks.len() as f64),
            val_nmse: report.nmse,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if let Some(dir) = run_dir.as_mut() {
            dir.log_epoch(&record)?;
        }
        if record.val_nmse < val_report.nmse {
            val_report = report;
            best = (epoch, model.clone());
            stale = 0;
            if let Some(dir) = run_dir.as_mut() {
                dir.save_best(&model, &meta_at(epoch))?;
            }
        } else {
            stale += 1;
        }
        epochs.push(record);
        if config.patience > 0 && stale >= config.patience {
            stopped_early = epoch < config.max_epochs;
            break;
        }
    }

    let (best_epoch, best_model) = best;
    let test_report = if test.is_empty() {
        None
    } else {
        Some(evaluation_report(&best_model, test, "test", config.eval_batch_size, &hash)?)
    };
    let record = RunRecord {
        config_hash: hash.clone(),
        best_epoch,
        best_val_nmse: val_report.nmse,
        stopped_early,
        best_checkpoint: run_dir.as_ref().map(|d| d.checkpoint_path()),
        val_report,
        test_report,
        parameter_count: best_model.parameter_count(),
        epochs,
    };
    if let Some(dir) = run_dir.as_mut() {
        dir.finish(&record)?;
    }
    Ok(TrainOutcome {
        record,
        model: best_model,
        meta: meta_at(best_epoch),
    })
}

/// Consecutive chunks of `order`. A trailing batch of one sample is merged
/// into the previous batch because batch norm needs more than one value
/// per channel.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

/// Forward, NMSE loss, backward and one optimizer step on a normalized
/// batch. Returns the loss before the update; a non-finite loss leaves the
/// model untouched.
fn train_step(model: &mut Model, adam: &mut Adam, batch: &[&Sample], clip: Option<f64>) -> Result<f64> {
    let graph = Graph::new();
    let cfg = model.config().clone();
    let out = model.forward(&graph, &ModelInput::from_samples(batch, &cfg.inputs), true)?;
    let loss = nmse_loss(out.output, &targets(batch, &cfg.outputs), &cfg.outputs)?;
    let value = loss.value().data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    graph.backward(loss)?;
    optimizer_step(adam, model.params_mut(), out.grads(), clip)?;
    model.apply_bn_updates(&out.bn_updates);
    Ok(value)
}

/// Applies one Adam update, first rescaling the gradients to global L2
/// norm `clip` if they exceed it. Returns the norm before clipping.
pub fn optimizer_step(
    adam: &mut Adam,
    params: &mut [Parameter],
    mut grads: Vec<Option<Tensor>>,
    clip: Option<f64>,
) -> Result<f64> {
    let norm = clip_grad_norm(&mut grads, clip);
    adam.step(params, &grads)?;
    Ok(norm)
}

/// Global L2 norm of `grads`, which are scaled down to norm `clip` when
/// they exceed it.
fn clip_grad_norm(grads: &mut [Option<Tensor>], clip: Option<f64>) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if let Some(c) = clip.filter(|&c| norm > c) {
        let factor = c / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(batches(&order, 3).len(), 3);
        assert_eq!(batches(&[7], 4), vec![vec![7]]);
    }

    #[test]
    fn clipping_rescales_to_the_cap() {
        let grad = |v: Vec<f64>| Some(Tensor::new([v.len()], v).unwrap());
        let mut grads = vec![grad(vec![3.0]), None, grad(vec![0.0, 4.0])];
        let close = |g: &Option<Tensor>, want: &[f64]| {
            g.as_ref().unwrap().data().iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15)
        };
        assert_eq!(clip_grad_norm(&mut grads, Some(1.0)), 5.0);
        assert!(close(&grads[0], &[0.6]) && close(&grads[2], &[0.0, 0.8]));
        assert!((clip_grad_norm(&mut grads, Some(2.0)) - 1.0).abs() < 1e-15);
        assert!(close(&grads[2], &[0.0, 0.8]), "under the cap");
    }
}
