use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::data::Trait;

/// Image modality fed to the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Input {
    Rgb,
    Depth,
}

impl Input {
    pub const ALL: [Input; 2] = [Input::Rgb, Input::Depth];

    pub fn name(self) -> &'static str {
        match self {
            Input::Rgb => "rgb",
            Input::Depth => "depth",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Input::Rgb => 3,
            Input::Depth => 1,
        }
    }
}

impl FromStr for Input {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rgb" => Ok(Input::Rgb),
            "depth" => Ok(Input::Depth),
            _ => Err(format!("unknown input {s:?}; expected rgb or depth")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    #[default]
    Standard,
    Deformable,
}

impl ConvKind {
    pub fn name(self) -> &'static str {
        match self {
            ConvKind::Standard => "standard",
            ConvKind::Deformable => "deformable",
        }
    }

    /// Table heading: CNN or DCNN.
    pub fn heading(self) -> &'static str {
        match self {
            ConvKind::Standard => "CNN",
            ConvKind::Deformable => "DCNN",
        }
    }
}

impl FromStr for ConvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(ConvKind::Standard),
            "deformable" => Ok(ConvKind::Deformable),
            _ => Err(format!("unknown conv kind {s:?}; expected standard or deformable")),
        }
    }
}

/// Where two modalities are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// One 4-channel encoder (experimental).
    Early,
    /// One encoder per modality, features concatenated before the head.
    #[default]
    Mid,
}

impl FromStr for Fusion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "early" => Ok(Fusion::Early),
            "mid" => Ok(Fusion::Mid),
            _ => Err(format!("unknown fusion {s:?}; expected early or mid")),
        }
    }
}

/// ResNet18-shaped encoder: a 7×7/2 stem and max-pool, then four stages of
/// basic residual blocks of widths `w, 2w, 4w, 8w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub base_width: usize,
    pub blocks_per_stage: [usize; 4],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            base_width: 8,
            blocks_per_stage: [2, 2, 2, 2],
        }
    }
}

impl EncoderConfig {
    /// Full-width ResNet18 layout.
    pub fn resnet18() -> Self {
        Self {
            base_width: 64,
            ..Self::default()
        }
    }

    pub fn out_channels(&self) -> usize {
        8 * self.base_width
    }
}

pub const DEFAULT_HEAD_HIDDEN: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub inputs: Vec<Input>,
    pub outputs: Vec<Trait>,
    pub conv_kind: ConvKind,
    pub fusion: Fusion,
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// MIMO: both inputs, all five traits, mid fusion.
    fn default() -> Self {
        Self {
            inputs: Input::ALL.to_vec(),
            outputs: Trait::ALL.to_vec(),
            conv_kind: ConvKind::Standard,
            fusion: Fusion::Mid,
            encoder: EncoderConfig::default(),
            head_hidden: DEFAULT_HEAD_HIDDEN,
            seed: 0,
        }
    }
}

fn strictly_increasing<T: Ord>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.inputs.is_empty() {
            return err("inputs must not be empty");
        }
        if self.outputs.is_empty() {
            return err("outputs must not be empty");
        }
        if !strictly_increasing(&self.inputs) {
            return err("inputs must be distinct and listed as rgb, depth");
        }
        if !strictly_increasing(&self.outputs) {
            return err("outputs must be distinct and in canonical trait order");
        }
        if self.fusion == Fusion::Early && self.inputs.len() != 2 {
            return err("early fusion needs both rgb and depth inputs");
        }
        if self.encoder.base_width == 0 || self.encoder.blocks_per_stage.contains(&0) {
            return err("encoder widths and block counts must be positive");
        }
        if self.head_hidden == 0 {
            return err("head_hidden must be positive");
        }
        Ok(())
    }

    pub fn with_conv_kind(mut self, kind: ConvKind) -> Self {
        self.conv_kind = kind;
        self
    }

    pub fn is_multi_input(&self) -> bool {
        self.inputs.len() > 1
    }

    pub fn is_multi_output(&self) -> bool {
        self.outputs.len() > 1
    }

    /// Row label of the architecture family: MIMO, MISO, SIMO-R, SIMO-D,
    /// SISO-R or SISO-D.
    pub fn family(&self) -> String {
        let io = match (self.is_multi_input(), self.is_multi_output()) {
            (true, true) => "MIMO",
            (true, false) => "MISO",
            (false, true) => "SIMO",
            (false, false) => "SISO",
        };
        if self.is_multi_input() {
            io.to_string()
        } else {
            let suffix = match self.inputs[0] {
                Input::Rgb => "R",
                Input::Depth => "D",
            };
            format!("{io}-{suffix}")
        }
    }

    /// Unique, filesystem-safe name, e.g. `siso-d-height-deformable`.
    pub fn slug(&self) -> String {
        let mut s = self.family().to_lowercase();
        if !self.is_multi_output() {
            s.push('-');
            s.push_str(self.outputs[0].name());
        }
        if self.fusion == Fusion::Early {
            s.push_str("-early");
        }
        s.push('-');
        s.push_str(self.conv_kind.name());
        s
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.slug())
    }
}

/// The 18 sub-models for one convolution kind: 1 MIMO, 5 MISO (one per
/// trait), 2 SIMO (one per input) and 10 SISO (input × trait). Other fields
/// are copied from `template`.
pub fn enumerate_ablation(conv_kind: ConvKind, template: &ModelConfig) -> Vec<ModelConfig> {
    let make = |inputs: Vec<Input>, outputs: Vec<Trait>| ModelConfig {
        inputs,
        outputs,
        conv_kind,
        fusion: Fusion::Mid,
        ..template.clone()
    };
    let mut out = vec![make(Input::ALL.to_vec(), Trait::ALL.to_vec())];
    out.extend(Trait::ALL.map(|t| make(Input::ALL.to_vec(), vec![t])));
    out.extend(Input::ALL.map(|i| make(vec![i], Trait::ALL.to_vec())));
    for i in Input::ALL {
        out.extend(Trait::ALL.map(|t| make(vec![i], vec![t])));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn ablation_has_eighteen_distinct_configs_per_kind() {
        let t = ModelConfig::default();
        let mut all = enumerate_ablation(ConvKind::Standard, &t);
        assert_eq!(all.len(), 18);
        let count = |fam: &str| all.iter().filter(|c| c.family().starts_with(fam)).count();
        assert_eq!((count("SISO"), count("SIMO"), count("MISO"), count("MIMO")), (10, 2, 5, 1));
        assert_eq!(
            all.iter()
                .filter(|c| c.inputs.len() == 2 && c.outputs.len() == 5)
                .count(),
            1
        );
        all.extend(enumerate_ablation(ConvKind::Deformable, &t));
        assert_eq!(all.len(), 36);
        let slugs: HashSet<String> = all.iter().map(ModelConfig::slug).collect();
        assert_eq!(slugs.len(), 36);
        assert!(all.iter().all(|c| c.validate().is_ok()));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let ok = ModelConfig::default();
        let bad = [
            ModelConfig {
                inputs: vec![],
                ..ok.clone()
            },
            ModelConfig {
                outputs: vec![],
                ..ok.clone()
            },
            ModelConfig {
                inputs: vec![Input::Depth, Input::Rgb],
                ..ok.clone()
            },
            ModelConfig {
                outputs: vec![Trait::Height, Trait::Height],
                ..ok.clone()
            },
            ModelConfig {
                inputs: vec![Input::Rgb],
                fusion: Fusion::Early,
                ..ok.clone()
            },
            ModelConfig {
                head_hidden: 0,
                ..ok.clone()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(ModelError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn families_and_slugs() {
        let c = ModelConfig {
            inputs: vec![Input::Depth],
            outputs: vec![Trait::Height],
            conv_kind: ConvKind::Deformable,
            ..ModelConfig::default()
        };
        assert_eq!(c.family(), "SISO-D");
        assert_eq!(c.slug(), "siso-d-height-deformable");
        assert_eq!(ModelConfig::default().slug(), "mimo-standard");
    }

    #[test]
    fn config_text_round_trips() {
        let c = ModelConfig {
            fusion: Fusion::Early,
            seed: 9,
            ..ModelConfig::default()
        };
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), c);
        let minimal: ModelConfig =
            serde_json::from_str(r#"{"inputs":["rgb"],"outputs":["leaf_area"]}"#).unwrap();
        assert_eq!(minimal.head_hidden, 256);
        assert_eq!(minimal.encoder.base_width, 8);
    }
}
