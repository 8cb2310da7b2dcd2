use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::trainer::{EpochRecord, RunRecord};
use super::{io_err, Result, TrainError};
use crate::data::NormalizationStats;
use crate::model::Model;
use crate::tensor::checkpoint::Checkpoint;

pub const CONFIG_FILE: &str = "config.json";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOG_FILE: &str = "log.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// Sample ids of each partition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Stored as the checkpoint metadata, so a checkpoint alone is enough to
/// rebuild the model and preprocess new data the way it was trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub train_config: TrainConfig,
    pub config_hash: String,
    pub stats: NormalizationStats,
    pub split: SplitIds,
    pub epoch: usize,
}

/// Rebuilds the model recorded in a checkpoint written by a training run.
pub fn load_trained(path: impl AsRef<Path>) -> Result<(Model, CheckpointMeta)> {
    let ckpt = Checkpoint::load(path.as_ref())?;
    let meta: CheckpointMeta = serde_json::from_str(&ckpt.metadata).map_err(|e| {
        TrainError::Config(format!(
            "{}: metadata is not a training record: {e}",
            path.as_ref().display()
        ))
    })?;
    let mut model = Model::build(&meta.train_config.model)?;
    model.load_checkpoint(&ckpt)?;
    Ok((model, meta))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("artifacts serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Deterministic fields of a run record.
#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    epochs_run: usize,
    best_epoch: usize,
    best_val_nmse: f64,
    stopped_early: bool,
    parameter_count: usize,
    val_report: &'a crate::metrics::EvaluationReport,
    test_report: &'a Option<crate::metrics::EvaluationReport>,
}

/// Output directory of one run. Everything except `log.jsonl` is a pure
/// function of the configuration and the data.
pub(crate) struct RunDir {
    root: PathBuf,
    log: BufWriter<File>,
}

impl RunDir {
    pub(crate) fn create(root: &Path, config: &TrainConfig) -> Result<Self> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        write_json(&root.join(CONFIG_FILE), config)?;
        let log_path = root.join(LOG_FILE);
        let log = File::create(&log_path).map_err(io_err(&log_path))?;
        Ok(Self {
            root: root.to_path_buf(),
            log: BufWriter::new(log),
        })
    }

    pub(crate) fn checkpoint_path(&self) -> PathBuf {
        self.root.join(CHECKPOINT_FILE)
    }

    pub(crate) fn log_epoch(&mut self, record: &EpochRecord) -> Result<()> {
        let unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let line = serde_json::json!({ "timestamp": unix, "record": record });
        let path = self.root.join(LOG_FILE);
        writeln!(self.log, "{line}").map_err(io_err(&path))?;
        self.log.flush().map_err(io_err(path))
    }

    pub(crate) fn save_best(&self, model: &Model, meta: &CheckpointMeta) -> Result<()> {
        let metadata = serde_json::to_string(meta).expect("metadata serializes");
        model.to_checkpoint(metadata).save(self.checkpoint_path())?;
        Ok(())
    }

    pub(crate) fn finish(&self, record: &RunRecord) -> Result<()> {
        let path = self.root.join(EPOCHS_FILE);
        let mut csv = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        csv.write_record(["epoch", "train_loss", "val_nmse"])
            .map_err(|e| csv_err(&path, e))?;
        for e in &record.epochs {
            let loss = e.train_loss.map(|l| l.to_string()).unwrap_or_default();
            csv.write_record([e.epoch.to_string(), loss, e.val_nmse.to_string()])
                .map_err(|e| csv_err(&path, e))?;
        }
        csv.flush().map_err(io_err(&path))?;

        write_json(&self.root.join("val_report.json"), &record.val_report)?;
        if let Some(test) = &record.test_report {
            write_json(&self.root.join("test_report.json"), test)?;
        }
        write_json(
            &self.root.join(SUMMARY_FILE),
            &Summary {
                config_hash: &record.config_hash,
                epochs_run: record.epochs.len() - 1,
                best_epoch: record.best_epoch,
                best_val_nmse: record.best_val_nmse,
                stopped_early: record.stopped_early,
                parameter_count: record.parameter_count,
                val_report: &record.val_report,
                test_report: &record.test_report,
            },
        )
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> TrainError {
    TrainError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}
