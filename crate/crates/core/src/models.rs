//! Encoder (backbone + projector), predictor, decoder and classifier head,
//! composed into the SimSiam, denoising-autoencoder and SidAE forward passes.
//!
//! Linear weights are stored `(in, out)`; conv weights `(out, in, k, k)`;
//! transposed-conv weights `(in, out, k, k)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Mode, RunningStats, Tensor};

pub const INPUT_CHANNELS: usize = 3;
pub const INPUT_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Resnet18Cifar,
    Tiny,
}

impl BackboneKind {
    pub fn feature_dim(self) -> usize {
        match self {
            BackboneKind::Resnet18Cifar => 512,
            BackboneKind::Tiny => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Resnet18Cifar => "resnet18_cifar",
            BackboneKind::Tiny => "tiny",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Simsiam,
    Dae,
    Sidae,
    Supervised,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Simsiam => "simsiam",
            ModelKind::Dae => "dae",
            ModelKind::Sidae => "sidae",
            ModelKind::Supervised => "supervised",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "simsiam" => Ok(ModelKind::Simsiam),
            "dae" => Ok(ModelKind::Dae),
            "sidae" => Ok(ModelKind::Sidae),
            "supervised" => Ok(ModelKind::Supervised),
            _ => Err(Error::Config(format!("unknown model kind `{s}`"))),
        }
    }

    pub fn has_predictor(self) -> bool {
        matches!(self, ModelKind::Simsiam | ModelKind::Sidae)
    }

    pub fn has_decoder(self) -> bool {
        matches!(self, ModelKind::Dae | ModelKind::Sidae)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub backbone: BackboneKind,
    pub d_hid: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backbone: BackboneKind::Resnet18Cifar,
            d_hid: 2048,
        }
    }
}

impl EncoderConfig {
    pub fn new(backbone: BackboneKind, d_hid: usize) -> Result<Self> {
        let cfg = EncoderConfig { backbone, d_hid };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    pub fn predictor_hidden(&self) -> usize {
        self.d_hid / 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_hid == 0 || !self.d_hid.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "model.d_hid = {} must be a positive multiple of 4",
                self.d_hid
            )));
        }
        Ok(())
    }
}

/// Component seeds are separate streams so that shared parts initialize
/// identically across model kinds.
mod streams {
    pub const BACKBONE: u64 = 0;
    pub const PROJECTOR: u64 = 1;
    pub const PREDICTOR: u64 = 2;
    pub const DECODER: u64 = 3;
    pub const HEAD: u64 = 4;
}

fn normal_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f32> {
    let d = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| d.sample(rng) as f32).collect()
}

fn uniform_vec(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-bound..=bound) as f32).collect()
}

type Params = Vec<(String, Tensor)>;
type Buffers<'a> = Vec<(String, &'a RunningStats<f32>)>;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

// ---- layers ---------------------------------------------------------------

#[derive(Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, input: usize, output: usize, bias: bool) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: Tensor::parameter(uniform_vec(rng, input * output, bound), &[input, output]).expect("shape"),
            bias: bias.then(|| Tensor::parameter(uniform_vec(rng, output, bound), &[output]).expect("shape")),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add_bias(b),
            None => Ok(y),
        }
    }

    fn params(&self, prefix: &str, out: &mut Params) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
}

#[derive(Debug)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: RunningStats<f32>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Tensor::parameter(vec![1.0; features], &[features]).expect("shape"),
            beta: Tensor::parameter(vec![0.0; features], &[features]).expect("shape"),
            stats: RunningStats::new(features),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        x.batch_norm(&self.gamma, &self.beta, &self.stats, mode)
    }

    fn params(&self, prefix: &str, out: &mut Params) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }

    fn buffers<'a>(&'a self, prefix: &str, out: &mut Buffers<'a>) {
        out.push((prefix.to_string(), &self.stats));
    }
}

#[derive(Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(rng: &mut impl Rng, input: usize, output: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let fan_in = input * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let n = output * fan_in;
        Conv2d {
            weight: Tensor::parameter(normal_vec(rng, n, std), &[output, input, kernel, kernel]).expect("shape"),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, self.stride, self.padding)
    }
}

#[derive(Debug)]
pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl ConvTranspose2d {
    pub const KERNEL: usize = 3;
    pub const STRIDE: usize = 2;
    pub const PADDING: usize = 1;
    pub const OUTPUT_PADDING: usize = 1;

    pub fn new(rng: &mut impl Rng, input: usize, output: usize, bias: bool) -> Self {
        let k = Self::KERNEL;
        let std = (2.0 / (input * k * k) as f64).sqrt();
        ConvTranspose2d {
            weight: Tensor::parameter(normal_vec(rng, input * output * k * k, std), &[input, output, k, k])
                .expect("shape"),
            bias: bias.then(|| Tensor::parameter(vec![0.0; output], &[output]).expect("shape")),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, Self::STRIDE, Self::PADDING, Self::OUTPUT_PADDING)?;
        match &self.bias {
            Some(b) => y.add_bias(b),
            None => Ok(y),
        }
    }
}

// ---- backbones ------------------------------------------------------------

#[derive(Debug)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub shortcut: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new(rng: &mut impl Rng, input: usize, output: usize, stride: usize) -> Self {
        let shortcut =
            (stride != 1 || input != output).then(|| (Conv2d::new(rng, input, output, 1, stride, 0), BatchNorm::new(output)));
        BasicBlock {
            conv1: Conv2d::new(rng, input, output, 3, stride, 1),
            bn1: BatchNorm::new(output),
            conv2: Conv2d::new(rng, output, output, 3, 1, 1),
            bn2: BatchNorm::new(output),
            shortcut,
        }
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, mode)?.relu();
        let h = self.bn2.forward(&self.conv2.forward(&h)?, mode)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, mode)?,
            None => x.clone(),
        };
        Ok(h.add(&skip)?.relu())
    }

    fn params(&self, prefix: &str, out: &mut Params) {
        out.push((join(prefix, "conv1.weight"), self.conv1.weight.clone()));
        self.bn1.params(&join(prefix, "bn1"), out);
        out.push((join(prefix, "conv2.weight"), self.conv2.weight.clone()));
        self.bn2.params(&join(prefix, "bn2"), out);
        if let Some((conv, bn)) = &self.shortcut {
            out.push((join(prefix, "shortcut.conv.weight"), conv.weight.clone()));
            bn.params(&join(prefix, "shortcut.bn"), out);
        }
    }

    fn buffers<'a>(&'a self, prefix: &str, out: &mut Buffers<'a>) {
        self.bn1.buffers(&join(prefix, "bn1"), out);
        self.bn2.buffers(&join(prefix, "bn2"), out);
        if let Some((_, bn)) = &self.shortcut {
            bn.buffers(&join(prefix, "shortcut.bn"), out);
        }
    }
}

/// Convolutional feature extractor ending in global average pooling.
#[derive(Debug)]
pub struct Backbone {
    pub kind: BackboneKind,
    /// Stem: a single conv for ResNet-18, both conv stages for `tiny`.
    pub stem: Vec<(Conv2d, BatchNorm)>,
    pub blocks: Vec<BasicBlock>,
}

impl Backbone {
    pub fn new(kind: BackboneKind, rng: &mut impl Rng) -> Self {
        match kind {
            BackboneKind::Tiny => Backbone {
                kind,
                stem: vec![
                    (Conv2d::new(rng, 3, 16, 3, 2, 1), BatchNorm::new(16)),
                    (Conv2d::new(rng, 16, 64, 3, 2, 1), BatchNorm::new(64)),
                ],
                blocks: Vec::new(),
            },
            BackboneKind::Resnet18Cifar => {
                let stem = vec![(Conv2d::new(rng, 3, 64, 3, 1, 1), BatchNorm::new(64))];
                let mut blocks = Vec::new();
                let mut input = 64;
                for (stage, &width) in [64, 128, 256, 512].iter().enumerate() {
                    for i in 0..2 {
                        let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                        blocks.push(BasicBlock::new(rng, input, width, stride));
                        input = width;
                    }
                }
                Backbone { kind, stem, blocks }
            }
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.kind.feature_dim()
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        check_input(x)?;
        let mut h = x.clone();
        for (conv, bn) in &self.stem {
            h = bn.forward(&conv.forward(&h)?, mode)?.relu();
        }
        for block in &self.blocks {
            h = block.forward(&h, mode)?;
        }
        h.global_avg_pool()
    }

    fn params(&self, prefix: &str, out: &mut Params) {
        for (i, (conv, bn)) in self.stem.iter().enumerate() {
            out.push((join(prefix, &format!("stem{i}.conv.weight")), conv.weight.clone()));
            bn.params(&join(prefix, &format!("stem{i}.bn")), out);
        }
        for (i, block) in self.blocks.iter().enumerate() {
            block.params(&join(prefix, &format!("block{i}")), out);
        }
    }

    fn buffers<'a>(&'a self, prefix: &str, out: &mut Buffers<'a>) {
        for (i, (_, bn)) in self.stem.iter().enumerate() {
            bn.buffers(&join(prefix, &format!("stem{i}.bn")), out);
        }
        for (i, block) in self.blocks.iter().enumerate() {
            block.buffers(&join(prefix, &format!("block{i}")), out);
        }
    }
}

fn check_input(x: &Tensor) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != INPUT_CHANNELS || s[2] != INPUT_SIZE || s[3] != INPUT_SIZE {
        return Err(Error::dim("encoder_forward", s, &[0, INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE]));
    }
    Ok(())
}

fn check_latent(op: &'static str, z: &Tensor, d_hid: usize) -> Result<()> {
    let s = z.shape();
    if s.len() != 2 || s[1] != d_hid {
        return Err(Error::dim(op, s, &[0, d_hid]));
    }
    Ok(())
}

// ---- heads ----------------------------------------------------------------

/// Three `Linear + BN` blocks, ReLU after the first two.
#[derive(Debug)]
pub struct Projector {
    pub layers: Vec<(Linear, BatchNorm)>,
}

impl Projector {
    fn new(rng: &mut impl Rng, input: usize, d_hid: usize) -> Self {
        let layers = (0..3)
            .map(|i| {
                let fan_in = if i == 0 { input } else { d_hid };
                (Linear::new(rng, fan_in, d_hid, false), BatchNorm::new(d_hid))
            })
            .collect();
        Projector { layers }
    }

    pub fn forward(&self, h: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut x = h.clone();
        for (i, (lin, bn)) in self.layers.iter().enumerate() {
            x = bn.forward(&lin.forward(&x)?, mode)?;
            if i + 1 < self.layers.len() {
                x = x.relu();
            }
        }
        Ok(x)
    }

    fn params(&self, prefix: &str, out: &mut Params) {
        for (i, (lin, bn)) in self.layers.iter().enumerate() {
            lin.params(&join(prefix, &format!("fc{i}")), out);
            bn.params(&join(prefix, &format!("bn{i}")), out);
        }
    }

    fn buffers<'a>(&'a self, prefix: &str, out: &mut Buffers<'a>) {
        for (i, (_, bn)) in self.layers.iter().enumerate() {
            bn.buffers(&join(prefix, &format!("bn{i}")), out);
        }
    }
}

/// Backbone followed by the projector; `z = Enc(x)`.
#[derive(Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub backbone: Backbone,
    pub projector: Projector,
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(config.backbone, &mut stream_rng(seed, streams::BACKBONE));
        let projector = Projector::new(
            &mut stream_rng(seed, streams::PROJECTOR),
            config.feature_dim(),
            config.d_hid,
        );
        Ok(Encoder {
            config,
            backbone,
            projector,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.projector.forward(&self.backbone.forward(x, mode)?, mode)
    }
}

#[derive(Debug)]
pub struct Predictor {
    pub fc1: Linear,
    pub bn: BatchNorm,
    pub fc2: Linear,
}

impl Predictor {
    pub fn new(d_hid: usize, seed: u64) -> Self {
        let rng = &mut stream_rng(seed, streams::PREDICTOR);
        let hidden = d_hid / 4;
        Predictor {
            fc1: Linear::new(rng, d_hid, hidden, false),
            bn: BatchNorm::new(hidden),
            fc2: Linear::new(rng, hidden, d_hid, true),
        }
    }

    pub fn hidden(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        check_latent("predictor_forward", z, self.fc1.input_dim())?;
        Ok(self.bn.forward(&self.fc1.forward(z)?, mode)?.relu())
    }

    pub fn forward(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        self.fc2.forward(&self.hidden(z, mode)?)
    }

    fn params(&self, prefix: &str, out: &mut Params) {
        self.fc1.params(&join(prefix, "fc1"), out);
        self.bn.params(&join(prefix, "bn"), out);
        self.fc2.params(&join(prefix, "fc2"), out);
    }
}

/// Linear map to a `(C0, 1, 1)` seed, then five stride-2 transposed convs
/// halving the channels up to the last, which emits 3 channels through a
/// sigmoid.
#[derive(Debug)]
pub struct Decoder {
    pub fc: Linear,
    pub layers: Vec<ConvTranspose2d>,
    pub norms: Vec<BatchNorm>,
}

impl Decoder {
    pub fn channel_schedule(base: usize) -> [usize; 6] {
        [base, base / 2, base / 4, base / 8, base / 16, INPUT_CHANNELS]
    }

    pub fn new(d_hid: usize, base: usize, seed: u64) -> Self {
        let rng = &mut stream_rng(seed, streams::DECODER);
        let ch = Self::channel_schedule(base);
        let fc = Linear::new(rng, d_hid, base, true);
        let layers: Vec<_> = (0..5).map(|i| ConvTranspose2d::new(rng, ch[i], ch[i + 1], i == 4)).collect();
        let norms = (1..5).map(|i| BatchNorm::new(ch[i])).collect();
        Decoder { fc, layers, norms }
    }

    /// Forward pass returning the output and the spatial size after the
    /// seed reshape and after each transposed conv.
    pub fn forward_traced(&self, z: &Tensor, mode: Mode) -> Result<(Tensor, Vec<usize>)> {
        check_latent("decoder_forward", z, self.fc.input_dim())?;
        let b = z.shape()[0];
        let mut h = self.fc.forward(z)?.reshape(&[b, self.fc.output_dim(), 1, 1])?;
        let mut trace = vec![1];
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            trace.push(h.shape()[2]);
            h = match self.norms.get(i) {
                Some(bn) => bn.forward(&h, mode)?.relu(),
                None => h.sigmoid(),
            };
        }
        Ok((h, trace))
    }

    pub fn forward(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.forward_traced(z, mode)?.0)
    }

    fn params(&self, prefix: &str, out: &mut Params) {
        self.fc.params(&join(prefix, "fc"), out);
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((join(prefix, &format!("deconv{i}.weight")), layer.weight.clone()));
            if let Some(b) = &layer.bias {
                out.push((join(prefix, &format!("deconv{i}.bias")), b.clone()));
            }
            if let Some(bn) = self.norms.get(i) {
                bn.params(&join(prefix, &format!("bn{i}")), out);
            }
        }
    }

    fn buffers<'a>(&'a self, prefix: &str, out: &mut Buffers<'a>) {
        for (i, bn) in self.norms.iter().enumerate() {
            bn.buffers(&join(prefix, &format!("bn{i}")), out);
        }
    }
}

/// Single linear layer over frozen or fine-tuned features.
#[derive(Debug)]
pub struct ClassifierHead {
    pub fc: Linear,
}

impl ClassifierHead {
    pub fn new(input: usize, classes: usize, seed: u64) -> Self {
        ClassifierHead {
            fc: Linear::new(&mut stream_rng(seed, streams::HEAD), input, classes, true),
        }
    }

    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        self.fc.forward(h)
    }

    pub fn named_parameters(&self) -> Params {
        let mut out = Vec::new();
        self.fc.params("head.fc", &mut out);
        out
    }
}

// ---- composed models ------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SimSiamOutput {
    pub z1: Tensor,
    pub z2: Tensor,
    pub p1: Tensor,
    pub p2: Tensor,
}

#[derive(Debug, Clone)]
pub struct DaeOutput {
    pub r1: Tensor,
    pub r2: Tensor,
}

#[derive(Debug, Clone)]
pub struct SidaeOutput {
    pub siamese: SimSiamOutput,
    pub reconstruction: DaeOutput,
}

/// A pretraining model: shared encoder plus the heads its kind requires.
#[derive(Debug)]
pub struct Model {
    pub kind: ModelKind,
    pub encoder: Encoder,
    pub predictor: Option<Predictor>,
    pub decoder: Option<Decoder>,
}

impl Model {
    pub fn new(kind: ModelKind, config: EncoderConfig, seed: u64) -> Result<Self> {
        let encoder = Encoder::new(config, seed)?;
        let predictor = kind.has_predictor().then(|| Predictor::new(config.d_hid, seed));
        let decoder = kind
            .has_decoder()
            .then(|| Decoder::new(config.d_hid, config.feature_dim(), seed));
        Ok(Model {
            kind,
            encoder,
            predictor,
            decoder,
        })
    }

    pub fn config(&self) -> EncoderConfig {
        self.encoder.config
    }

    fn predictor(&self) -> Result<&Predictor> {
        self.predictor
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{} model has no predictor", self.kind.name())))
    }

    fn decoder(&self) -> Result<&Decoder> {
        self.decoder
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{} model has no decoder", self.kind.name())))
    }

    pub fn simsiam_forward(&self, x1: &Tensor, x2: &Tensor, mode: Mode) -> Result<SimSiamOutput> {
        let pred = self.predictor()?;
        let z1 = self.encoder.forward(x1, mode)?;
        let z2 = self.encoder.forward(x2, mode)?;
        let p1 = pred.forward(&z1, mode)?;
        let p2 = pred.forward(&z2, mode)?;
        Ok(SimSiamOutput { z1, z2, p1, p2 })
    }

    pub fn dae_forward(&self, x1: &Tensor, x2: &Tensor, mode: Mode) -> Result<DaeOutput> {
        let dec = self.decoder()?;
        let r1 = dec.forward(&self.encoder.forward(x1, mode)?, mode)?;
        let r2 = dec.forward(&self.encoder.forward(x2, mode)?, mode)?;
        Ok(DaeOutput { r1, r2 })
    }

    /// Each view is encoded once; the same `z` feeds predictor and decoder.
    pub fn sidae_forward(&self, x1: &Tensor, x2: &Tensor, mode: Mode) -> Result<SidaeOutput> {
        let (pred, dec) = (self.predictor()?, self.decoder()?);
        let z1 = self.encoder.forward(x1, mode)?;
        let z2 = self.encoder.forward(x2, mode)?;
        let p1 = pred.forward(&z1, mode)?;
        let p2 = pred.forward(&z2, mode)?;
        let r1 = dec.forward(&z1, mode)?;
        let r2 = dec.forward(&z2, mode)?;
        Ok(SidaeOutput {
            siamese: SimSiamOutput { z1, z2, p1, p2 },
            reconstruction: DaeOutput { r1, r2 },
        })
    }

    /// All trainable tensors with stable, unique names, in a fixed order.
    pub fn named_parameters(&self) -> Params {
        let mut out = Vec::new();
        self.encoder.backbone.params("backbone", &mut out);
        self.encoder.projector.params("projector", &mut out);
        if let Some(p) = &self.predictor {
            p.params("predictor", &mut out);
        }
        if let Some(d) = &self.decoder {
            d.params("decoder", &mut out);
        }
        out
    }

    pub fn named_buffers(&self) -> Buffers<'_> {
        let mut out = Vec::new();
        self.encoder.backbone.buffers("backbone", &mut out);
        self.encoder.projector.buffers("projector", &mut out);
        if let Some(p) = &self.predictor {
            p.bn.buffers("predictor.bn", &mut out);
        }
        if let Some(d) = &self.decoder {
            d.buffers("decoder", &mut out);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Backbone-only parameter and buffer lists, used when fine-tuning.
pub fn backbone_parameters(backbone: &Backbone) -> Params {
    let mut out = Vec::new();
    backbone.params("backbone", &mut out);
    out
}

pub fn backbone_buffers(backbone: &Backbone) -> Buffers<'_> {
    let mut out = Vec::new();
    backbone.buffers("backbone", &mut out);
    out
}

pub fn projector_parameters(projector: &Projector) -> Params {
    let mut out = Vec::new();
    projector.params("projector", &mut out);
    out
}

pub fn projector_buffers(projector: &Projector) -> Buffers<'_> {
    let mut out = Vec::new();
    projector.buffers("projector", &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn tiny(d_hid: usize) -> EncoderConfig {
        EncoderConfig::new(BackboneKind::Tiny, d_hid).unwrap()
    }

    fn batch(b: usize, seed: u64) -> Tensor {
        let mut rng = stream_rng(seed, 99);
        let data = (0..b * 3 * 32 * 32).map(|_| rng.random_range(0.0..1.0f32)).collect();
        Tensor::from_vec(data, &[b, 3, 32, 32]).unwrap()
    }

    fn assert_close(a: &[f32], b: &[f32]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn d_hid_must_be_multiple_of_four() {
        assert!(EncoderConfig::new(BackboneKind::Tiny, 30).is_err());
        assert!(EncoderConfig::new(BackboneKind::Tiny, 0).is_err());
        assert_eq!(tiny(512).predictor_hidden(), 128);
        assert_eq!(EncoderConfig::default().predictor_hidden(), 512);
    }

    #[test]
    fn encoder_shapes() {
        let m = Model::new(ModelKind::Sidae, tiny(32), 0).unwrap();
        let z = m.encoder.forward(&batch(2, 1), Mode::Train).unwrap();
        assert_eq!(z.shape(), &[2, 32]);
        let bad = Tensor::zeros(&[2, 3, 28, 28]);
        assert!(matches!(m.encoder.forward(&bad, Mode::Eval), Err(Error::Dimension { .. })));
    }

    #[test]
    fn identical_rows_in_eval_mode() {
        let m = Model::new(ModelKind::Simsiam, tiny(16), 3).unwrap();
        let one = batch(1, 5).to_vec();
        let two = Tensor::from_vec([one.clone(), one].concat(), &[2, 3, 32, 32]).unwrap();
        let z = m.encoder.forward(&two, Mode::Eval).unwrap().to_vec();
        assert_eq!(z[..16], z[16..]);
    }

    #[test]
    fn predictor_bottleneck() {
        let p = Predictor::new(512, 0);
        let z = Tensor::full(&[3, 512], 0.1f32);
        assert_eq!(p.hidden(&z, Mode::Train).unwrap().shape(), &[3, 128]);
        assert_eq!(p.forward(&z, Mode::Train).unwrap().shape(), &[3, 512]);
        assert!(p.forward(&Tensor::zeros(&[3, 64]), Mode::Eval).is_err());
    }

    #[test]
    fn decoder_trace_and_range() {
        let d = Decoder::new(32, 64, 0);
        let mut rng = stream_rng(0, 7);
        let z = Tensor::from_vec((0..4 * 32).map(|_| rng.random_range(-3.0..3.0f32)).collect(), &[4, 32]).unwrap();
        let (out, trace) = d.forward_traced(&z, Mode::Train).unwrap();
        assert_eq!(trace, vec![1, 2, 4, 8, 16, 32]);
        assert_eq!(out.shape(), &[4, 3, 32, 32]);
        assert!(out.to_vec().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(d.forward(&Tensor::zeros(&[4, 16]), Mode::Eval).is_err());
    }

    #[test]
    fn zero_decoder_outputs_half() {
        let d = Decoder::new(8, 64, 0);
        let mut params = Vec::new();
        d.params("", &mut params);
        for (_, t) in &params {
            t.update_data(|v| v.fill(0.0));
        }
        let out = d.forward(&Tensor::full(&[2, 8], 1.0f32), Mode::Eval).unwrap();
        assert!(out.to_vec().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn resnet_decoder_channels() {
        assert_eq!(Decoder::channel_schedule(512), [512, 256, 128, 64, 32, 3]);
    }

    #[test]
    fn siamese_views_are_symmetric() {
        let m = Model::new(ModelKind::Simsiam, tiny(16), 1).unwrap();
        let (a, b) = (batch(2, 1), batch(2, 2));
        let o = m.simsiam_forward(&a, &b, Mode::Eval).unwrap();
        let s = m.simsiam_forward(&b, &a, Mode::Eval).unwrap();
        assert_eq!(o.z1.to_vec(), s.z2.to_vec());
        assert_eq!(o.p1.to_vec(), s.p2.to_vec());
        let same = m.simsiam_forward(&a, &a, Mode::Eval).unwrap();
        assert_eq!(same.z1.to_vec(), same.z2.to_vec());
        assert_eq!(same.p1.to_vec(), same.p2.to_vec());
    }

    #[test]
    fn sidae_reuses_z_and_matches_simsiam() {
        let cfg = tiny(16);
        let sid = Model::new(ModelKind::Sidae, cfg, 4).unwrap();
        let sim = Model::new(ModelKind::Simsiam, cfg, 4).unwrap();
        let (a, b) = (batch(2, 1), batch(2, 2));
        let o = sid.sidae_forward(&a, &b, Mode::Eval).unwrap();
        let s = sim.simsiam_forward(&a, &b, Mode::Eval).unwrap();
        assert_eq!(o.siamese.z1.to_vec(), s.z1.to_vec());
        assert_eq!(o.siamese.p2.to_vec(), s.p2.to_vec());
        let r1_parent = o.reconstruction.r1.clone();
        let mut stack = vec![r1_parent];
        let mut found = false;
        while let Some(t) = stack.pop() {
            if t.id() == o.siamese.z1.id() {
                found = true;
                break;
            }
            stack.extend(t.parents());
        }
        assert!(found, "decoder must consume the same z tensor");
        assert_eq!(o.reconstruction.r1.shape(), &[2, 3, 32, 32]);
    }

    #[test]
    fn dae_shares_encoder_init_and_is_deterministic() {
        let cfg = tiny(16);
        let dae = Model::new(ModelKind::Dae, cfg, 2).unwrap();
        let sid = Model::new(ModelKind::Sidae, cfg, 2).unwrap();
        let a = batch(2, 3);
        let o = dae.dae_forward(&a, &a, Mode::Eval).unwrap();
        assert_eq!(o.r1.to_vec(), o.r2.to_vec());
        let s = sid.sidae_forward(&a, &a, Mode::Eval).unwrap();
        assert_close(&o.r1.to_vec(), &s.reconstruction.r1.to_vec());
        assert!(dae.simsiam_forward(&a, &a, Mode::Eval).is_err());
        assert_eq!(dae.encoder.projector.layers.len(), 3);
    }

    #[test]
    fn parameter_names_are_unique() {
        let m = Model::new(ModelKind::Sidae, tiny(16), 0).unwrap();
        let names: Vec<_> = m.named_parameters().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn parameter_counts_are_pinned() {
        let resnet = Backbone::new(BackboneKind::Resnet18Cifar, &mut stream_rng(0, 0));
        let n: usize = backbone_parameters(&resnet).iter().map(|(_, t)| t.numel()).sum();
        assert_eq!(n, 11_168_832);
        let cases = [
            (BackboneKind::Resnet18Cifar, 2048, ModelKind::Simsiam, 22_718_528),
            (BackboneKind::Resnet18Cifar, 2048, ModelKind::Dae, 23_235_939),
            (BackboneKind::Resnet18Cifar, 2048, ModelKind::Sidae, 25_336_163),
            (BackboneKind::Resnet18Cifar, 512, ModelKind::Sidae, 13_921_379),
            (BackboneKind::Tiny, 32, ModelKind::Simsiam, 14_656),
            (BackboneKind::Tiny, 32, ModelKind::Dae, 40_919),
            (BackboneKind::Tiny, 32, ModelKind::Sidae, 41_479),
        ];
        for (bb, d, kind, expected) in cases {
            let m = Model::new(kind, EncoderConfig::new(bb, d).unwrap(), 0).unwrap();
            assert_eq!(m.parameter_count(), expected, "{bb:?} {d} {kind:?}");
        }
    }
}
