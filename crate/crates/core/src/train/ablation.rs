use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::artifacts::{csv_err, write_json};
use super::config::TrainConfig;
use super::trainer::{prepare, train_prepared};
use super::{io_err, Result};
use crate::data::{Dataset, Trait};
use crate::metrics::EvaluationReport;
use crate::model::{enumerate_ablation, ConvKind, Input};

/// Architecture rows of the summary table, top to bottom.
pub const ROW_FAMILIES: [&str; 6] = ["MIMO", "MISO", "SIMO-R", "SIMO-D", "SISO-R", "SISO-D"];

/// One trained configuration of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub slug: String,
    pub family: String,
    pub conv_kind: ConvKind,
    pub inputs: Vec<Input>,
    pub outputs: Vec<Trait>,
    pub best_epoch: Option<usize>,
    /// Metrics on the report split; `None` if the run failed.
    pub report: Option<EvaluationReport>,
    pub error: Option<String>,
}

/// One architecture family under one convolution kind. Families with
/// single-output sub-models take each trait's MSE from the sub-model that
/// predicts it, and sum the sub-models' NMSE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub family: String,
    pub conv_kind: ConvKind,
    /// Per-trait MSE in canonical trait order; `None` where a run failed.
    pub mse: IndexMap<String, Option<f64>>,
    pub nmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// `"test"`, or `"val"` when the dataset has no test split.
    pub split: String,
    pub rows: Vec<AblationRow>,
    pub cells: Vec<AblationCell>,
}

/// Trains every enumerated configuration for each kind in `kinds`, one
/// after another, on a single shared split. A failed run is recorded in
/// its cell and the remaining runs continue. `progress` is called after
/// each run with its position and total count.
pub fn run_ablation(
    kinds: &[ConvKind],
    template: &TrainConfig,
    dataset: &Dataset,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(usize, usize, &AblationCell),
) -> Result<AblationReport> {
    template.validate()?;
    let data = prepare(template, dataset)?;
    let split = if data.test.is_empty() { "val" } else { "test" };
    let configs: Vec<_> = kinds
        .iter()
        .flat_map(|&k| enumerate_ablation(k, &template.model))
        .collect();
    let mut cells = Vec::with_capacity(configs.len());
    for (i, model) in configs.iter().enumerate() {
        let config = TrainConfig {
            model: model.clone(),
            ..template.clone()
        };
        let run_dir = out_dir.map(|d| d.join("runs").join(model.slug()));
        let outcome = train_prepared(&config, &data, &data.test, run_dir.as_deref());
        let (best_epoch, report, error) = match outcome {
            Ok(o) => {
                let report = if split == "test" {
                    o.record.test_report
                } else {
                    Some(o.record.val_report)
                };
                (Some(o.record.best_epoch), report, None)
            }
            Err(e) => (None, None, Some(e.to_string())),
        };
        let cell = AblationCell {
            slug: model.slug(),
            family: model.family(),
            conv_kind: model.conv_kind,
            inputs: model.inputs.clone(),
            outputs: model.outputs.clone(),
            best_epoch,
            report,
            error,
        };
        progress(i + 1, configs.len(), &cell);
        cells.push(cell);
    }
    let report = AblationReport {
        split: split.to_string(),
        rows: build_rows(kinds, &cells),
        cells,
    };
    if let Some(dir) = out_dir {
        report.write(dir)?;
    }
    Ok(report)
}

fn build_rows(kinds: &[ConvKind], cells: &[AblationCell]) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for &kind in kinds {
        for family in ROW_FAMILIES {
            let members: Vec<&AblationCell> = cells
                .iter()
                .filter(|c| c.conv_kind == kind && c.family == family)
                .collect();
            let mse = Trait::ALL
                .iter()
                .map(|t| {
                    let value = members
                        .iter()
                        .find(|c| c.outputs.contains(t))
                        .and_then(|c| c.report.as_ref())
                        .and_then(|r| r.mse.get(t.name()).copied());
                    (t.name().to_string(), value)
                })
                .collect();
            let nmse = if members.is_empty() {
                None
            } else {
                members
                    .iter()
                    .map(|c| c.report.as_ref().map(|r| r.nmse))
                    .sum::<Option<f64>>()
            };
            rows.push(AblationRow {
                family: family.to_string(),
                conv_kind: kind,
                mse,
                nmse,
            });
        }
    }
    rows
}

fn cell_text(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "failed".into())
}

impl AblationReport {
    /// Markdown table: one line per family and convolution kind.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("Per-trait MSE and overall NMSE on the {} split.\n\n| Model | Conv |", self.split);
        for t in Trait::ALL {
            write!(out, " {} |", t.heading()).expect("string write");
        }
        out.push_str(" NMSE |\n|---|---|");
        out.push_str(&"---:|".repeat(Trait::ALL.len() + 1));
        out.push('\n');
        for row in &self.rows {
            write!(out, "| {} | {} |", row.family, row.conv_kind.heading()).expect("string write");
            for v in row.mse.values() {
                write!(out, " {} |", cell_text(*v)).expect("string write");
            }
            writeln!(out, " {} |", cell_text(row.nmse)).expect("string write");
        }
        out
    }

    /// Writes `ablation.csv`, `ablation.md` and `ablation.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("ablation.csv");
        let mut csv = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let mut header = vec!["conv_kind".to_string(), "model".to_string()];
        header.extend(Trait::ALL.iter().map(|t| format!("{}_mse", t.name())));
        header.push("nmse".into());
        csv.write_record(&header).map_err(|e| csv_err(&path, e))?;
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            let mut line = vec![row.conv_kind.name().to_string(), row.family.clone()];
            line.extend(row.mse.values().map(|v| num(*v)));
            line.push(num(row.nmse));
            csv.write_record(&line).map_err(|e| csv_err(&path, e))?;
        }
        csv.flush().map_err(io_err(&path))?;
        let md = dir.join("ablation.md");
        fs::write(&md, self.to_markdown()).map_err(io_err(&md))?;
        write_json(&dir.join("ablation.json"), self)
    }
}
