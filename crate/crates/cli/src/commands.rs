use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde_json::json;
use traitnet::data::synthetic::{write_synthetic, MIN_IMAGE_SIZE};
use traitnet::data::{
    normalize, read_depth_png, read_rgb_png, CropSetting, Dataset, Sample, TraitVector,
};
use traitnet::metrics::evaluation_report;
use traitnet::model::{ConvKind, Input, Model};
use traitnet::tensor::Tensor;
use traitnet::train::{load_trained, prepare, run_ablation, train, CheckpointMeta, TrainConfig};
use traitnet::viz::{extract_offsets, filter_strong, render_overlay, OverlayOptions, VizError};

use crate::args::{
    AblateArgs, Cli, Command, ConvertArgs, EvalArgs, GenArgs, SplitName, TrainArgs, VizArgs,
};
use crate::Failure;

type Outcome = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a, cli.seed),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a, cli.seed),
        Command::VizOffsets(a) => viz_offsets(a),
        Command::ConvertCheckpoint(a) => convert(a),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

fn require_file(path: &Path, what: &str) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(anyhow!("{what} {} does not exist", path.display())))
    }
}

fn load_dataset(path: &Path, crop: CropSetting) -> Result<Dataset, Failure> {
    let manifest = Dataset::manifest_path(path);
    require_file(&manifest, "dataset manifest")?;
    Dataset::load(&manifest, crop).map_err(|e| usage(anyhow!(e).context(format!("loading {}", manifest.display()))))
}

fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta), Failure> {
    require_file(path, "checkpoint")?;
    load_trained(path).map_err(|e| usage(anyhow!(e).context(format!("loading {}", path.display()))))
}

fn gen_synthetic(a: GenArgs, seed: Option<u64>) -> Outcome {
    if a.count == 0 {
        return Err(usage(anyhow!("--count must be at least 1")));
    }
    if a.size < MIN_IMAGE_SIZE {
        return Err(usage(anyhow!("--size must be at least {MIN_IMAGE_SIZE}")));
    }
    let manifest = write_synthetic(&a.out, a.count, a.size, seed.unwrap_or(0))?;
    print_json(&json!({
        "out": a.out,
        "count": manifest.samples.len(),
        "size": a.size,
        "test_ids": manifest.test_ids.len(),
    }));
    Ok(())
}

/// Loads the data and checks that the configuration can split it, so every
/// input problem surfaces before anything is written.
fn checked_inputs(config: &TrainConfig, data: &Path) -> Result<Dataset, Failure> {
    let dataset = load_dataset(data, config.crop)?;
    prepare(config, &dataset).map_err(usage)?;
    Ok(dataset)
}

fn train_cmd(a: TrainArgs, seed: Option<u64>) -> Outcome {
    let config = a.flags.resolve(Some(&a.arch), seed).map_err(usage)?;
    let dataset = checked_inputs(&config, &a.data.data)?;
    let out = train(&config, &dataset, Some(&a.out))?;
    let r = &out.record;
    print_json(&json!({
        "run_dir": a.out,
        "model": config.model.slug(),
        "config_hash": r.config_hash,
        "epochs_run": r.epochs.len() - 1,
        "best_epoch": r.best_epoch,
        "best_val_nmse": r.best_val_nmse,
        "test_nmse": r.test_report.as_ref().map(|t| t.nmse),
        "stopped_early": r.stopped_early,
    }));
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let dataset = load_dataset(&a.data.data, meta.train_config.crop)?;
    let by_id: HashMap<&str, &Sample> = dataset.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let (name, ids): (&str, Vec<&str>) = match a.split {
        SplitName::Train => ("train", meta.split.train.iter().map(String::as_str).collect()),
        SplitName::Val => ("val", meta.split.val.iter().map(String::as_str).collect()),
        SplitName::Test => ("test", meta.split.test.iter().map(String::as_str).collect()),
        SplitName::All => ("all", dataset.samples.iter().map(|s| s.id.as_str()).collect()),
    };
    if ids.is_empty() {
        return Err(usage(anyhow!("the {name} split of this checkpoint is empty")));
    }
    let samples = ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .map(|s| normalize(s, &meta.stats))
                .ok_or_else(|| usage(anyhow!("sample {id} of the {name} split is not in the dataset")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = evaluation_report(
        &model,
        &samples,
        name,
        meta.train_config.eval_batch_size,
        &meta.config_hash,
    )?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &a.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(out, text.clone() + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn ablate(a: AblateArgs, seed: Option<u64>) -> Outcome {
    let template = a.flags.resolve(None, seed).map_err(usage)?;
    let dataset = checked_inputs(&template, &a.data.data)?;
    let report = run_ablation(&a.conv.kinds(), &template, &dataset, Some(&a.out), &mut |i, n, cell| {
        let status = json!({
            "progress": format!("{i}/{n}"),
            "model": cell.slug,
            "nmse": cell.report.as_ref().map(|r| r.nmse),
            "error": cell.error,
        });
        eprintln!("{status}");
    })?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn placeholder_traits() -> TraitVector {
    TraitVector {
        fresh_weight: 0.0,
        dry_weight: 0.0,
        height: 0.0,
        diameter: 0.0,
        leaf_area: 0.0,
    }
}

/// The raw image to inspect: a sample of the dataset, or image files.
fn viz_sample(a: &VizArgs, meta: &CheckpointMeta) -> Result<Sample, Failure> {
    let crop = meta.train_config.crop;
    let path = PathBuf::from(&a.image);
    if path.is_file() {
        let rgb = read_rgb_png(&path).map_err(usage)?;
        let depth = match &a.depth {
            Some(d) => {
                require_file(d, "depth image")?;
                read_depth_png(d).map_err(usage)?
            }
            None if meta.train_config.model.inputs.contains(&Input::Depth) => {
                return Err(usage(anyhow!("this model reads depth; pass --depth")));
            }
            None => Tensor::zeros([1, rgb.shape()[1], rgb.shape()[2]]),
        };
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let sample = Sample::new(id, rgb, depth, placeholder_traits(), "unknown").map_err(usage)?;
        return crop.apply(sample).map_err(usage);
    }
    let data = a
        .data
        .as_ref()
        .ok_or_else(|| usage(anyhow!("--image {} is not a file and no --data was given", a.image)))?;
    let dataset = load_dataset(data, crop)?;
    dataset
        .samples
        .into_iter()
        .find(|s| s.id == a.image)
        .ok_or_else(|| usage(anyhow!("no sample {} in {}", a.image, data.display())))
}

fn viz_offsets(a: VizArgs) -> Outcome {
    if a.threshold.is_nan() || a.threshold < 0.0 {
        return Err(usage(anyhow!("--threshold must be non-negative")));
    }
    if a.scale == 0 {
        return Err(usage(anyhow!("--scale must be at least 1")));
    }
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    if model.deformable_layers().is_empty() {
        return Err(usage(VizError::NoDeformableLayer));
    }
    let raw = viz_sample(&a, &meta)?;
    let field = extract_offsets(&model, &normalize(&raw, &meta.stats))?;
    let strong = filter_strong(&field, a.threshold)?;
    let kernel_points = match &a.kernel_points {
        Some(k) => k.clone(),
        None => strong.busiest_kernel_points(a.max_kernel_points),
    };
    let options = OverlayOptions {
        max_kernel_points: a.max_kernel_points,
        scale: a.scale,
        marker_radius: a.scale / 2,
    };
    let overlay = render_overlay(&raw, &strong, &kernel_points, &options).map_err(|e| match e {
        VizError::KernelPointOutOfRange { .. } | VizError::TooManyKernelPoints { .. } => usage(e),
        other => Failure::Runtime(other.into()),
    })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    overlay.save(&a.out)?;
    let groups = strong.by_kernel_point();
    let summary = json!({
        "image": raw.id,
        "layer": field.layer,
        "geometry": strong.geometry,
        "threshold": strong.threshold,
        "strong_offsets": strong.len(),
        "legend": overlay.legend.iter().map(|(k, c)| json!({
            "kernel_point": k,
            "colour": c,
            "strong_offsets": groups.get(k).map_or(0, Vec::len),
        })).collect::<Vec<_>>(),
        "points": overlay.points,
    });
    let sidecar = a.out.with_extension("json");
    fs::write(&sidecar, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", sidecar.display()))?;
    print_json(&json!({
        "overlay": a.out,
        "offsets": sidecar,
        "layer": field.layer,
        "strong_offsets": strong.len(),
        "kernel_points": kernel_points,
    }));
    Ok(())
}

fn convert(a: ConvertArgs) -> Outcome {
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    if meta.train_config.model.conv_kind == ConvKind::Deformable {
        return Err(usage(anyhow!("{} is already a deformable model", a.checkpoint.display())));
    }
    let mut train_config = meta.train_config.clone();
    train_config.model.conv_kind = ConvKind::Deformable;
    let mut converted = Model::build(&train_config.model)?;
    converted.load_checkpoint(&model.to_checkpoint(""))?;
    let meta = CheckpointMeta {
        config_hash: train_config.hash(),
        train_config,
        ..meta
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    converted
        .to_checkpoint(serde_json::to_string(&meta)?)
        .save(&a.out)?;
    print_json(&json!({
        "out": a.out,
        "deformable_layers": converted.deformable_layers().len(),
        "config_hash": meta.config_hash,
    }));
    Ok(())
}
