use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use traitnet::data::{CropSetting, CropWindow, SamplerStrategy, Trait, TrainSize};
use traitnet::model::{ConvKind, Fusion, Input};
use traitnet::train::TrainConfig;

const ROOT_HELP: &str = "\
Exit status: 0 on success, 2 for usage errors (bad flags, invalid configuration, \
missing inputs), 1 for failures while running. Errors are printed to stderr as one \
JSON object.";

#[derive(Debug, Parser)]
#[command(name = "traitnet", version, about = "Plant trait regression with standard and deformable convolutions", after_help = ROOT_HELP)]
pub struct Cli {
    /// Seed for everything random: data generation, splits, sampling,
    /// augmentation and weight initialization. Overrides config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset of ellipsoidal plants with exact traits.
    GenSynthetic(GenArgs),
    /// Train one model and write its run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Train every architecture of the ablation grid and tabulate the results.
    Ablate(AblateArgs),
    /// Draw the strong offsets of the first deformable layer over an image.
    VizOffsets(VizArgs),
    /// Turn a standard-convolution checkpoint into an equivalent deformable one.
    ConvertCheckpoint(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory; receives manifest.json, rgb/ and depth/.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of plants. The last eighth are listed as the test split.
    #[arg(long, default_value_t = 400)]
    pub count: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Dataset directory containing manifest.json, or the manifest itself.
    #[arg(long, env = "TRAITNET_DATA")]
    pub data: PathBuf,
}

/// Architecture choices of a single `train` run.
#[derive(Debug, Args)]
pub struct ArchFlags {
    /// Comma-separated inputs: rgb, depth [default: rgb,depth].
    #[arg(long, value_delimiter = ',')]
    pub inputs: Option<Vec<Input>>,
    /// Comma-separated traits: fresh_weight, dry_weight, height, diameter,
    /// leaf_area [default: all five].
    #[arg(long, value_delimiter = ',')]
    pub outputs: Option<Vec<Trait>>,
    /// standard or deformable [default: standard].
    #[arg(long)]
    pub conv: Option<ConvKind>,
}

/// Training settings. Precedence, lowest first: built-in defaults, the
/// `--config` file, then individual flags.
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// TOML or JSON file with training settings (the layout of config.json
    /// in a run directory; any subset of keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// mid (one encoder per input) or early (one 4-channel encoder,
    /// experimental) [default: mid].
    #[arg(long)]
    pub fusion: Option<Fusion>,
    /// Encoder width of the first stage [default: 8; 64 is full ResNet18].
    #[arg(long)]
    pub base_width: Option<usize>,
    /// Residual blocks in each of the four stages [default: 2].
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Hidden units of the regression head [default: 256].
    #[arg(long)]
    pub head_hidden: Option<usize>,
    /// Adam learning rate, constant for the whole run [default: 5e-4].
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 300]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Stop after this many epochs without a lower validation NMSE; 0
    /// disables early stopping [default: 30, or max-epochs if smaller].
    #[arg(long)]
    pub patience: Option<usize>,
    /// random, freshweight-bins[:B] (B equal-width bins, default 10) or
    /// variety-stratified [default: random].
    #[arg(long)]
    pub sampler: Option<SamplerStrategy>,
    /// Turn off flips, rotations and shifts.
    #[arg(long)]
    pub no_augment: bool,
    /// Cap on the global gradient norm [default: off].
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Fraction of the non-test samples used for training, the rest
    /// validating [default: 0.75].
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Comma-separated test ids replacing the manifest's list.
    #[arg(long, value_delimiter = ',')]
    pub test_ids: Option<Vec<String>>,
    /// Crop applied on load: auto (rows 200..900, columns 650..1450, giving
    /// 700×800 from a 1080×1920 capture, when the image is that large;
    /// otherwise the whole image), none, or Y0:Y1:X0:X1 [default: auto].
    #[arg(long, value_parser = parse_crop)]
    pub crop: Option<CropSetting>,
}

pub fn parse_crop(s: &str) -> Result<CropSetting, String> {
    match s {
        "auto" => Ok(CropSetting::Auto),
        "none" => Ok(CropSetting::None),
        _ => {
            let v: Vec<usize> = s
                .split(':')
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| format!("invalid crop {s:?}; expected auto, none or Y0:Y1:X0:X1"))?;
            match v[..] {
                [y0, y1, x0, x1] if y0 < y1 && x0 < x1 => Ok(CropSetting::Window(CropWindow { y0, y1, x0, x1 })),
                _ => Err(format!("invalid crop window {s:?}; expected Y0:Y1:X0:X1 with Y0<Y1, X0<X1")),
            }
        }
    }
}

/// Reads a TOML or JSON settings file, chosen by extension.
pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

impl TrainFlags {
    /// Defaults, then the config file, then flags and the global seed. The
    /// global seed drives both the run and the weight initialization.
    pub fn resolve(&self, arch: Option<&ArchFlags>, seed: Option<u64>) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => read_config(p)?,
            None => TrainConfig::default(),
        };
        let m = &mut c.model;
        if let Some(a) = arch {
            if let Some(v) = &a.inputs {
                m.inputs = v.clone();
            }
            if let Some(v) = &a.outputs {
                m.outputs = v.clone();
            }
            set(&mut m.conv_kind, a.conv);
        }
        set(&mut m.fusion, self.fusion);
        set(&mut m.encoder.base_width, self.base_width);
        if let Some(b) = self.blocks {
            m.encoder.blocks_per_stage = [b; 4];
        }
        set(&mut m.head_hidden, self.head_hidden);
        set(&mut m.seed, seed);
        set(&mut c.lr, self.lr);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.max_epochs, self.max_epochs);
        set(&mut c.patience, self.patience);
        if self.patience.is_none() {
            c.patience = c.patience.min(c.max_epochs);
        }
        set(&mut c.sampler, self.sampler);
        set(&mut c.seed, seed);
        set(&mut c.crop, self.crop);
        if self.no_augment {
            c.augment = traitnet::data::AugmentConfig::disabled();
        }
        if self.grad_clip.is_some() {
            c.grad_clip = self.grad_clip;
        }
        if let Some(f) = self.train_fraction {
            c.split.train_size = TrainSize::Fraction(f);
        }
        if self.test_ids.is_some() {
            c.split.test_ids = self.test_ids.clone();
        }
        if let TrainSize::Fraction(f) = c.split.train_size {
            if !(f > 0.0 && f <= 1.0) {
                bail!("train fraction must be in (0, 1], got {f}");
            }
        }
        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Run directory; receives config.json, epochs.csv, best.ckpt,
    /// val_report.json, test_report.json, summary.json and log.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub arch: ArchFlags,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    /// Every sample of the dataset.
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train` (best.ckpt).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArg,
    /// Split recorded in the checkpoint.
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Also write the report JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConvChoice {
    Standard,
    Deformable,
    Both,
}

impl ConvChoice {
    pub fn kinds(self) -> Vec<ConvKind> {
        match self {
            ConvChoice::Standard => vec![ConvKind::Standard],
            ConvChoice::Deformable => vec![ConvKind::Deformable],
            ConvChoice::Both => vec![ConvKind::Standard, ConvKind::Deformable],
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Output directory; receives ablation.csv, ablation.md, ablation.json
    /// and runs/<model>/ for each of the 18 models per convolution kind.
    #[arg(long)]
    pub out: PathBuf,
    /// Convolution kinds to run.
    #[arg(long, value_enum, default_value_t = ConvChoice::Both)]
    pub conv: ConvChoice,
    /// Template settings shared by every model.
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    /// Checkpoint of a model with deformable layers.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sample id in --data, or the path of an RGB PNG.
    #[arg(long)]
    pub image: String,
    /// Depth PNG paired with an --image path (needed by depth models).
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Dataset for sample ids.
    #[arg(long, env = "TRAITNET_DATA")]
    pub data: Option<PathBuf>,
    /// Offsets at least this long, in input pixels, are strong.
    #[arg(long, default_value_t = traitnet::viz::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Comma-separated kernel point indices to draw [default: the ones with
    /// the most strong offsets].
    #[arg(long, value_delimiter = ',')]
    pub kernel_points: Option<Vec<usize>>,
    /// Most kernel points drawn at once; crowded overlays are unreadable.
    #[arg(long, default_value_t = traitnet::viz::DEFAULT_MAX_KERNEL_POINTS)]
    pub max_kernel_points: usize,
    /// Integer upscaling of the image.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Output PNG; the strong offsets and legend go to the same path with a
    /// .json extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Standard-convolution checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Destination; the offset convolutions start at zero, so the
    /// converted model computes the same outputs.
    #[arg(long)]
    pub out: PathBuf,
}
