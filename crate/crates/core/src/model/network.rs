use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ConvKind, Fusion, Input, ModelConfig, ModelError, Result};
use crate::data::Sample;
use crate::deform::{convert_standard_to_deformable, deform_conv2d, Conv2dLayer};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::ops::{self, BatchMoments, BatchNormMode, Conv2dParams};
use crate::tensor::{Graph, Parameter, Tensor, Var};

/// Offset groups requested for an encoder's input convolution.
pub const FIRST_LAYER_OFFSET_GROUPS: usize = 3;
/// Offset groups requested for every other convolution.
pub const OFFSET_GROUPS: usize = 8;

/// Largest divisor of `in_channels` not above `desired`.
pub fn offset_groups_for(in_channels: usize, desired: usize) -> usize {
    (1..=desired.min(in_channels))
        .rev()
        .find(|g| in_channels % g == 0)
        .unwrap_or(1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct OffsetSpec {
    weight: usize,
    bias: usize,
    groups: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct ConvLayer {
    name: String,
    weight: usize,
    bias: usize,
    params: Conv2dParams,
    first: bool,
    offset: Option<OffsetSpec>,
}

#[derive(Clone, Debug, PartialEq)]
struct BnLayer {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    conv1: usize,
    bn1: usize,
    conv2: usize,
    bn2: usize,
    down: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
struct Encoder {
    inputs: Vec<Input>,
    adapter: Option<usize>,
    stem: usize,
    stem_bn: usize,
    blocks: Vec<Block>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LinearSpec {
    weight: usize,
    bias: usize,
}

/// A built network. Parameters and batch-norm running statistics live in
/// flat, named arenas in a fixed order; layers refer to them by index.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Parameter>,
    buffers: Vec<Parameter>,
    convs: Vec<ConvLayer>,
    bns: Vec<BnLayer>,
    encoders: Vec<Encoder>,
    fc1: LinearSpec,
    fc2: LinearSpec,
}

/// A batch of model inputs, `[N,3,H,W]` RGB and `[N,1,H,W]` depth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelInput {
    pub rgb: Option<Tensor>,
    pub depth: Option<Tensor>,
}

impl ModelInput {
    pub fn get(&self, input: Input) -> Option<&Tensor> {
        match input {
            Input::Rgb => self.rgb.as_ref(),
            Input::Depth => self.depth.as_ref(),
        }
    }

    /// Stacks the requested modalities of `samples` into batch tensors.
    pub fn from_samples(samples: &[&Sample], inputs: &[Input]) -> Self {
        let stack = |pick: fn(&Sample) -> &Tensor| {
            let first = pick(samples[0]).shape().to_vec();
            let data: Vec<f64> = samples.iter().flat_map(|s| pick(s).data().iter().copied()).collect();
            let mut shape = vec![samples.len()];
            shape.extend(first);
            Tensor::new(shape, data).expect("samples share one image size")
        };
        let want = |i| !samples.is_empty() && inputs.contains(&i);
        ModelInput {
            rgb: want(Input::Rgb).then(|| stack(|s| &s.rgb)),
            depth: want(Input::Depth).then(|| stack(|s| &s.depth)),
        }
    }

    pub fn batch_size(&self) -> Option<usize> {
        self.rgb.as_ref().or(self.depth.as_ref()).map(|t| t.shape()[0])
    }
}

/// Batch statistics of one batch-norm layer, to be folded into its running
/// estimates after the step.
#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate {
    layer: usize,
    pub moments: BatchMoments,
}

/// Offsets predicted by one deformable layer during a forward pass.
pub struct OffsetRecord<'g> {
    pub layer: String,
    /// `[N, 2·k·k·G, H', W']`.
    pub offsets: Var<'g>,
    pub groups: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

pub struct ForwardOutput<'g> {
    /// `[N, |outputs|]`.
    pub output: Var<'g>,
    /// Graph leaves of the parameters, in [`Model::params`] order.
    pub params: Vec<Var<'g>>,
    pub bn_updates: Vec<BnUpdate>,
    /// Deformable layers in execution order (RGB encoder first).
    pub offsets: Vec<OffsetRecord<'g>>,
}

impl ForwardOutput<'_> {
    /// Gradients of the parameters after `Graph::backward`.
    pub fn grads(&self) -> Vec<Option<Tensor>> {
        self.params.iter().map(|v| v.grad()).collect()
    }
}

struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Parameter>,
    buffers: Vec<Parameter>,
    convs: Vec<ConvLayer>,
    bns: Vec<BnLayer>,
}

impl Builder {
    fn push(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    /// He-uniform weights, zero bias.
    fn conv(&mut self, name: String, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> usize {
        let bound = (6.0 / (c_in * k * k) as f64).sqrt();
        let w = Tensor::uniform([c_out, c_in, k, k], -bound, bound, &mut self.rng);
        let weight = self.push(format!("{name}.weight"), w);
        let bias = self.push(format!("{name}.bias"), Tensor::zeros([c_out]));
        self.convs.push(ConvLayer {
            name,
            weight,
            bias,
            params: Conv2dParams::new(stride, pad),
            first: false,
            offset: None,
        });
        self.convs.len() - 1
    }

    fn bn(&mut self, name: &str, c: usize) -> usize {
        let gamma = self.push(format!("{name}.gamma"), Tensor::ones([c]));
        let beta = self.push(format!("{name}.beta"), Tensor::zeros([c]));
        self.buffers
            .push(Parameter::new(format!("{name}.running_mean"), Tensor::zeros([c])));
        self.buffers
            .push(Parameter::new(format!("{name}.running_var"), Tensor::ones([c])));
        let n = self.buffers.len();
        self.bns.push(BnLayer {
            gamma,
            beta,
            mean: n - 2,
            var: n - 1,
        });
        self.bns.len() - 1
    }

    fn linear(&mut self, name: &str, c_in: usize, c_out: usize) -> LinearSpec {
        let bound = (6.0 / c_in as f64).sqrt();
        let w = Tensor::uniform([c_out, c_in], -bound, bound, &mut self.rng);
        LinearSpec {
            weight: self.push(format!("{name}.weight"), w),
            bias: self.push(format!("{name}.bias"), Tensor::zeros([c_out])),
        }
    }

    fn encoder(&mut self, config: &ModelConfig, prefix: &str, inputs: Vec<Input>) -> Encoder {
        let width = config.encoder.base_width;
        let channels: usize = inputs.iter().map(|i| i.channels()).sum();
        let adapter = (inputs == [Input::Depth]).then(|| self.conv(format!("{prefix}.adapter"), 1, 3, 1, 1, 0));
        let stem_in = if adapter.is_some() { 3 } else { channels };
        let stem = self.conv(format!("{prefix}.stem.conv"), stem_in, width, 7, 2, 3);
        self.convs[stem].first = true;
        let stem_bn = self.bn(&format!("{prefix}.stem.bn"), width);
        let mut blocks = Vec::new();
        let mut c = width;
        for (stage, &count) in config.encoder.blocks_per_stage.iter().enumerate() {
            let out = width << stage;
            for b in 0..count {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                let name = format!("{prefix}.layer{}.{b}", stage + 1);
                let conv1 = self.conv(format!("{name}.conv1"), c, out, 3, stride, 1);
                let bn1 = self.bn(&format!("{name}.bn1"), out);
                let conv2 = self.conv(format!("{name}.conv2"), out, out, 3, 1, 1);
                let bn2 = self.bn(&format!("{name}.bn2"), out);
                let down = (stride != 1 || c != out).then(|| {
                    let conv = self.conv(format!("{name}.down.conv"), c, out, 1, stride, 0);
                    (conv, self.bn(&format!("{name}.down.bn"), out))
                });
                blocks.push(Block {
                    conv1,
                    bn1,
                    conv2,
                    bn2,
                    down,
                });
                c = out;
            }
        }
        Encoder {
            inputs,
            adapter,
            stem,
            stem_bn,
            blocks,
        }
    }
}

impl Model {
    /// Builds and initializes a model. Initialization depends only on
    /// `config.seed` and the architecture, so a deformable model starts
    /// from exactly the weights of its standard twin, plus zero offsets.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            params: Vec::new(),
            buffers: Vec::new(),
            convs: Vec::new(),
            bns: Vec::new(),
        };
        let encoders = match config.fusion {
            Fusion::Early => vec![b.encoder(config, "fused", config.inputs.clone())],
            Fusion::Mid => config
                .inputs
                .iter()
                .map(|&i| b.encoder(config, i.name(), vec![i]))
                .collect(),
        };
        let features = encoders.len() * config.encoder.out_channels();
        let fc1 = b.linear("head.fc1", features, config.head_hidden);
        let fc2 = b.linear("head.fc2", config.head_hidden, config.outputs.len());
        let mut model = Model {
            config: config.clone(),
            params: b.params,
            buffers: b.buffers,
            convs: b.convs,
            bns: b.bns,
            encoders,
            fc1,
            fc2,
        };
        if config.conv_kind == ConvKind::Deformable {
            model.convert_to_deformable()?;
        }
        Ok(model)
    }

    fn convert_to_deformable(&mut self) -> Result<()> {
        for i in 0..self.convs.len() {
            let layer = &self.convs[i];
            let conv = Conv2dLayer::new(
                self.params[layer.weight].value.clone(),
                self.params[layer.bias].value.clone(),
                layer.params,
            )?;
            let desired = if layer.first {
                FIRST_LAYER_OFFSET_GROUPS
            } else {
                OFFSET_GROUPS
            };
            let groups = offset_groups_for(conv.in_channels(), desired);
            let deform = convert_standard_to_deformable(&conv, groups)?;
            let name = layer.name.clone();
            self.params
                .push(Parameter::new(format!("{name}.offset.weight"), deform.offset.weight));
            self.params
                .push(Parameter::new(format!("{name}.offset.bias"), deform.offset.bias));
            let n = self.params.len();
            self.convs[i].offset = Some(OffsetSpec {
                weight: n - 2,
                bias: n - 1,
                groups,
            });
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Batch-norm running statistics.
    pub fn buffers(&self) -> &[Parameter] {
        &self.buffers
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Names of the deformable convolutions with their offset group count,
    /// in execution order.
    pub fn deformable_layers(&self) -> Vec<(String, usize)> {
        self.convs
            .iter()
            .filter_map(|c| c.offset.map(|o| (c.name.clone(), o.groups)))
            .collect()
    }

    fn check_input(&self, input: &ModelInput) -> Result<usize> {
        let mut batch = None;
        for &i in &self.config.inputs {
            let t = input
                .get(i)
                .ok_or_else(|| ModelError::Input(format!("model needs the {} input", i.name())))?;
            if t.rank() != 4 || t.shape()[1] != i.channels() {
                return Err(ModelError::Input(format!(
                    "{} input must be [N,{},H,W], got {:?}",
                    i.name(),
                    i.channels(),
                    t.shape()
                )));
            }
            if *batch.get_or_insert(t.shape()[0]) != t.shape()[0] {
                return Err(ModelError::Input("inputs differ in batch size".into()));
            }
        }
        if let (Fusion::Early, Some(r), Some(d)) = (self.config.fusion, &input.rgb, &input.depth) {
            if r.shape()[2..] != d.shape()[2..] {
                return Err(ModelError::Input("early fusion needs equal rgb and depth sizes".into()));
            }
        }
        Ok(batch.unwrap_or(0))
    }

    /// Runs the network on `graph`. In training mode parameters are bound
    /// as trainable leaves and batch norm uses batch statistics; otherwise
    /// parameters are constants and batch norm uses running statistics.
    pub fn forward<'g>(&self, graph: &'g Graph, input: &ModelInput, train: bool) -> Result<ForwardOutput<'g>> {
        self.check_input(input)?;
        let params = self
            .params
            .iter()
            .map(|p| graph.leaf(p.value.clone(), train))
            .collect();
        let mut pass = Pass {
            model: self,
            vars: params,
            train,
            bn_updates: Vec::new(),
            offsets: Vec::new(),
        };
        let mut features = Vec::with_capacity(self.encoders.len());
        for enc in &self.encoders {
            let x = match enc.inputs.as_slice() {
                [single] => input.get(*single).expect("checked").clone(),
                _ => concat_channels(input.rgb.as_ref().expect("checked"), input.depth.as_ref().expect("checked")),
            };
            features.push(pass.encoder(enc, graph.constant(x))?);
        }
        let fused = if features.len() == 1 {
            features[0]
        } else {
            ops::concat(&features)?
        };
        let h = ops::relu(fused);
        let h = ops::relu(ops::linear(h, pass.vars[self.fc1.weight], Some(pass.vars[self.fc1.bias]))?);
        let output = ops::linear(h, pass.vars[self.fc2.weight], Some(pass.vars[self.fc2.bias]))?;
        Ok(ForwardOutput {
            output,
            params: pass.vars,
            bn_updates: pass.bn_updates,
            offsets: pass.offsets,
        })
    }

    /// Inference-mode predictions `[N, |outputs|]`.
    pub fn predict(&self, input: &ModelInput) -> Result<Tensor> {
        let graph = Graph::new();
        let out = self.forward(&graph, input, false)?;
        let value = out.output.value();
        Ok((*value).clone())
    }

    /// Folds training-batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            let layer = &self.bns[u.layer];
            let (mi, vi) = (layer.mean, layer.var);
            debug_assert!(mi < vi);
            let (lo, hi) = self.buffers.split_at_mut(vi);
            u.moments
                .update_running(lo[mi].value.data_mut(), hi[0].value.data_mut());
        }
    }

    /// All parameters and buffers as checkpoint records.
    pub fn to_checkpoint(&self, metadata: impl Into<String>) -> Checkpoint {
        let records = self.params.iter().chain(&self.buffers).cloned().collect();
        Checkpoint::new(metadata, records)
    }

    /// Copies weights by name. Offset convolutions absent from the
    /// checkpoint keep their zero initialization, which turns a standard
    /// checkpoint into an equivalent deformable model. Any other missing,
    /// unexpected or mis-shaped record is an error and leaves the model
    /// untouched.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let records: HashMap<&str, &Tensor> = ckpt
            .records
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .collect();
        let (mut missing, mut mismatched) = (Vec::new(), Vec::new());
        let mut known = std::collections::HashSet::new();
        for p in self.params.iter().chain(&self.buffers) {
            known.insert(p.name.as_str());
            match records.get(p.name.as_str()) {
                Some(t) if t.shape() == p.value.shape() => {}
                Some(t) => mismatched.push(format!("{} {:?} vs {:?}", p.name, t.shape(), p.value.shape())),
                None if is_offset_param(&p.name) => {}
                None => missing.push(p.name.clone()),
            }
        }
        let unexpected: Vec<String> = ckpt
            .records
            .iter()
            .filter(|p| !known.contains(p.name.as_str()))
            .map(|p| p.name.clone())
            .collect();
        if !(missing.is_empty() && unexpected.is_empty() && mismatched.is_empty()) {
            return Err(ModelError::WeightMismatch {
                missing,
                unexpected,
                mismatched,
            });
        }
        for p in self.params.iter_mut().chain(self.buffers.iter_mut()) {
            if let Some(t) = records.get(p.name.as_str()) {
                p.value = (*t).clone();
            }
        }
        Ok(())
    }
}

fn is_offset_param(name: &str) -> bool {
    name.ends_with(".offset.weight") || name.ends_with(".offset.bias")
}

fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca, cb) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let plane = a.shape()[2] * a.shape()[3];
    let mut data = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Tensor::new([n, ca + cb, a.shape()[2], a.shape()[3]], data).expect("concat shape")
}

struct Pass<'m, 'g> {
    model: &'m Model,
    vars: Vec<Var<'g>>,
    train: bool,
    bn_updates: Vec<BnUpdate>,
    offsets: Vec<OffsetRecord<'g>>,
}

impl<'g> Pass<'_, 'g> {
    fn conv(&mut self, idx: usize, x: Var<'g>) -> Result<Var<'g>> {
        let layer = &self.model.convs[idx];
        let (w, b) = (self.vars[layer.weight], self.vars[layer.bias]);
        match layer.offset {
            None => Ok(ops::conv2d(x, w, Some(b), layer.params)?),
            Some(o) => {
                let offsets = ops::conv2d(x, self.vars[o.weight], Some(self.vars[o.bias]), layer.params)?;
                self.offsets.push(OffsetRecord {
                    layer: layer.name.clone(),
                    offsets,
                    groups: o.groups,
                    kernel: self.model.params[layer.weight].value.shape()[2],
                    stride: layer.params.stride,
                    padding: layer.params.padding,
                });
                Ok(deform_conv2d(x, offsets, w, Some(b), layer.params, o.groups)?)
            }
        }
    }

    fn bn(&mut self, idx: usize, x: Var<'g>) -> Result<Var<'g>> {
        let layer = &self.model.bns[idx];
        let (gamma, beta) = (self.vars[layer.gamma], self.vars[layer.beta]);
        if self.train {
            let (y, moments) = ops::batch_norm2d(x, gamma, beta, BatchNormMode::Train)?;
            self.bn_updates.push(BnUpdate {
                layer: idx,
                moments: moments.expect("train mode reports moments"),
            });
            Ok(y)
        } else {
            let mode = BatchNormMode::Eval {
                running_mean: self.model.buffers[layer.mean].value.data(),
                running_var: self.model.buffers[layer.var].value.data(),
            };
            Ok(ops::batch_norm2d(x, gamma, beta, mode)?.0)
        }
    }

    fn conv_bn(&mut self, conv: usize, bn: usize, x: Var<'g>) -> Result<Var<'g>> {
        let y = self.conv(conv, x)?;
        self.bn(bn, y)
    }

    /// Pooled features `[N, 8·base_width]`.
    fn encoder(&mut self, enc: &Encoder, x: Var<'g>) -> Result<Var<'g>> {
        let mut x = x;
        if let Some(a) = enc.adapter {
            x = self.conv(a, x)?;
        }
        x = ops::relu(self.conv_bn(enc.stem, enc.stem_bn, x)?);
        x = ops::max_pool2d(x, 3, 2, 1)?;
        for block in &enc.blocks {
            let h = ops::relu(self.conv_bn(block.conv1, block.bn1, x)?);
            let h = self.conv_bn(block.conv2, block.bn2, h)?;
            let shortcut = match block.down {
                Some((c, b)) => self.conv_bn(c, b, x)?,
                None => x,
            };
            x = ops::relu(ops::add(h, shortcut)?);
        }
        Ok(ops::global_avg_pool(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trait;

    fn tiny(inputs: Vec<Input>, outputs: Vec<Trait>) -> ModelConfig {
        ModelConfig {
            inputs,
            outputs,
            encoder: super::super::EncoderConfig {
                base_width: 4,
                blocks_per_stage: [1, 1, 1, 1],
            },
            head_hidden: 16,
            seed: 7,
            ..ModelConfig::default()
        }
    }

    fn batch(n: usize, size: usize, seed: u64) -> ModelInput {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        ModelInput {
            rgb: Some(Tensor::uniform([n, 3, size, size], -1.0, 1.0, &mut r)),
            depth: Some(Tensor::uniform([n, 1, size, size], -1.0, 1.0, &mut r)),
        }
    }

    #[test]
    fn group_fallback_picks_largest_divisor() {
        assert_eq!(offset_groups_for(3, 3), 3);
        assert_eq!(offset_groups_for(1, 3), 1);
        assert_eq!(offset_groups_for(4, 3), 2);
        assert_eq!(offset_groups_for(64, 8), 8);
        assert_eq!(offset_groups_for(12, 8), 6);
    }

    #[test]
    fn mimo_has_two_encoders_and_five_outputs() {
        let m = Model::build(&tiny(Input::ALL.to_vec(), Trait::ALL.to_vec())).unwrap();
        assert_eq!(m.encoders.len(), 2);
        assert!(m.encoders[1].adapter.is_some() && m.encoders[0].adapter.is_none());
        assert_eq!(m.predict(&batch(2, 32, 1)).unwrap().shape(), &[2, 5]);
    }

    #[test]
    fn siso_has_one_encoder_and_one_output() {
        let m = Model::build(&tiny(vec![Input::Rgb], vec![Trait::FreshWeight])).unwrap();
        assert_eq!(m.encoders.len(), 1);
        let input = ModelInput {
            depth: None,
            ..batch(3, 32, 2)
        };
        assert_eq!(m.predict(&input).unwrap().shape(), &[3, 1]);
        let missing = ModelInput {
            rgb: None,
            ..batch(1, 32, 2)
        };
        assert!(matches!(m.predict(&missing), Err(ModelError::Input(_))));
    }

    #[test]
    fn early_fusion_uses_a_four_channel_stem() {
        let cfg = ModelConfig {
            fusion: Fusion::Early,
            ..tiny(Input::ALL.to_vec(), Trait::ALL.to_vec())
        };
        let m = Model::build(&cfg).unwrap();
        assert_eq!(m.encoders.len(), 1);
        let stem = &m.params[m.convs[m.encoders[0].stem].weight];
        assert_eq!(stem.value.shape()[1], 4);
        assert_eq!(m.predict(&batch(2, 32, 3)).unwrap().shape(), &[2, 5]);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let cfg = tiny(Input::ALL.to_vec(), Trait::ALL.to_vec());
        assert_eq!(Model::build(&cfg).unwrap(), Model::build(&cfg).unwrap());
        let other = ModelConfig { seed: 8, ..cfg.clone() };
        assert_ne!(Model::build(&cfg).unwrap().params, Model::build(&other).unwrap().params);
    }

    #[test]
    fn deformable_groups_and_parameter_count() {
        let cfg = tiny(Input::ALL.to_vec(), Trait::ALL.to_vec());
        let std_model = Model::build(&cfg).unwrap();
        let def = Model::build(&cfg.clone().with_conv_kind(ConvKind::Deformable)).unwrap();
        let layers = def.deformable_layers();
        assert_eq!(layers.len(), def.convs.len());
        let groups: HashMap<_, _> = layers.into_iter().collect();
        assert_eq!(groups["rgb.stem.conv"], 3);
        assert_eq!(groups["depth.adapter"], 1);
        assert_eq!(groups["depth.stem.conv"], 3);
        assert_eq!(groups["rgb.layer1.0.conv1"], 4);
        assert_eq!(groups["rgb.layer2.0.conv1"], 4);
        assert_eq!(groups["rgb.layer3.0.conv1"], 8);
        assert!(def.parameter_count() > std_model.parameter_count());
    }

    #[test]
    fn bn_running_stats_move_towards_batch_stats() {
        let mut m = Model::build(&tiny(vec![Input::Rgb], vec![Trait::Height])).unwrap();
        let before = m.buffers.clone();
        let g = Graph::new();
        let out = m.forward(&g, &batch(4, 32, 5), true).unwrap();
        let updates = out.bn_updates.clone();
        drop(out);
        assert_eq!(updates.len(), m.bns.len());
        m.apply_bn_updates(&updates);
        assert_ne!(m.buffers, before);
        let first = &updates[0].moments;
        let expect: Vec<f64> = first.mean.iter().map(|v| 0.1 * v).collect();
        let got = m.buffers[m.bns[0].mean].value.data();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn concat_channels_interleaves_per_sample() {
        let a = Tensor::new([2, 1, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::new([2, 1, 1, 2], vec![5., 6., 7., 8.]).unwrap();
        assert_eq!(
            concat_channels(&a, &b).data(),
            &[1., 2., 5., 6., 3., 4., 7., 8.]
        );
    }
}
