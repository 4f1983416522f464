//! Pre-training, linear probing and fine-tuning.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{make_views, AugmentationConfig};
use crate::checkpoint::{Checkpoint, Entry};
use crate::data::{Dataset, SubsetSpec, IMAGE_LEN};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, dae_loss, dae_loss_pair, sidae_loss, simsiam_loss, Loss};
use crate::models::{
    backbone_buffers, backbone_parameters, projector_buffers, projector_parameters, ClassifierHead, Encoder, Model,
    ModelKind,
};
use crate::rng::{epoch_stream, stream_rng};
use crate::tensor::{Mode, RunningStats, Tensor};

const SHUFFLE_KEY: u64 = 0x5348_5546_464c_4521;
const PROBE_KEY: u64 = 0x5052_4f42_4553_4545;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::pretrain_default()
    }
}

impl OptimizerConfig {
    pub fn pretrain_default() -> Self {
        OptimizerConfig {
            lr0: 0.03,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 512,
            epochs: 200,
            schedule: Schedule::Cosine,
        }
    }

    pub fn probe_default() -> Self {
        OptimizerConfig {
            lr0: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 256,
            epochs: 50,
            schedule: Schedule::Constant,
        }
    }

    pub fn validate(&self, section: &str) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{section}.{field} {why}")));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0", "must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: usize, total_steps: usize) -> Result<f64> {
        match self.schedule {
            Schedule::Constant => Ok(self.lr0),
            Schedule::Cosine => cosine_lr(step, total_steps, self.lr0),
        }
    }
}

/// `lr0 · ½(1 + cos(π · step / total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::param("cosine_lr: total_steps must be positive"));
    }
    if step > total_steps {
        return Err(Error::param(format!("cosine_lr: step {step} beyond {total_steps}")));
    }
    Ok(lr0 * 0.5 * (1.0 + (PI * step as f64 / total_steps as f64).cos()))
}

/// SGD with momentum; weight decay is an L2 term added to the gradient
/// before the momentum update.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum: momentum as f32,
            weight_decay: weight_decay as f32,
            velocity: Vec::new(),
        }
    }

    pub fn from_config(cfg: &OptimizerConfig) -> Self {
        Self::new(cfg.momentum, cfg.weight_decay)
    }

    pub fn velocity(&self) -> &[Vec<f32>] {
        &self.velocity
    }

    /// `v ← μ·v + (g + λ·θ)`, `θ ← θ − lr·v` for every parameter.
    pub fn step(&mut self, params: &[(String, Tensor)], lr: f64) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let lr = lr as f32;
        for ((name, p), v) in params.iter().zip(&mut self.velocity) {
            let g = p
                .grad()
                .ok_or_else(|| Error::Contract(format!("no gradient for trainable parameter {name}")))?;
            let (mu, wd) = (self.momentum, self.weight_decay);
            p.update_data(|theta| {
                for ((t, vi), gi) in theta.iter_mut().zip(v.iter_mut()).zip(&g) {
                    *vi = mu * *vi + (gi + wd * *t);
                    *t -= lr * *vi;
                }
            });
        }
        Ok(())
    }

    pub fn entries(&self, params: &[(String, Tensor)]) -> Vec<Entry> {
        self.velocity
            .iter()
            .zip(params)
            .map(|(v, (name, t))| Entry::from_slice(format!("momentum/{name}"), t.shape(), v))
            .collect()
    }

    /// Restores momentum buffers; a checkpoint without any starts from zero.
    pub fn load_entries(&mut self, ck: &Checkpoint, params: &[(String, Tensor)]) -> Result<()> {
        if ck.entries_with_prefix("momentum/").next().is_none() {
            self.velocity.clear();
            return Ok(());
        }
        self.velocity = params
            .iter()
            .map(|(name, t)| {
                let key = format!("momentum/{name}");
                let e = ck
                    .get(&key)
                    .ok_or_else(|| Error::Config(format!("checkpoint is missing `{key}`")))?;
                if e.shape != t.shape() {
                    return Err(Error::Config(format!("checkpoint `{key}` has shape {:?}", e.shape)));
                }
                e.values()
            })
            .collect::<Result<_>>()?;
        Ok(())
    }
}

fn zero_grads(params: &[(String, Tensor)]) {
    params.iter().for_each(|(_, t)| t.zero_grad());
}

// ---- metrics --------------------------------------------------------------

pub const METRICS_HEADER: [&str; 8] = ["epoch", "step", "lr", "loss_total", "loss_si", "loss_dae", "split", "accuracy"];

/// One line of a run's metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss_total: Option<f64>,
    pub loss_si: Option<f64>,
    pub loss_dae: Option<f64>,
    pub split: String,
    pub accuracy: Option<f64>,
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(METRICS_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

// ---- pre-training ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaeTarget {
    /// Reconstruct the un-augmented input.
    Clean,
    /// Reconstruct each view's own input.
    Augmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub optimizer: OptimizerConfig,
    pub w: f64,
    pub dae_target: DaeTarget,
    pub checkpoint_interval: usize,
    pub augmentation: AugmentationConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            optimizer: OptimizerConfig::pretrain_default(),
            w: 0.5,
            dae_target: DaeTarget::Clean,
            checkpoint_interval: 25,
            augmentation: AugmentationConfig::default(),
        }
    }
}

/// Input batch and its two views, each `(B, 3, 32, 32)`.
#[derive(Debug, Clone)]
pub struct ViewBatch {
    pub x: Tensor,
    pub x1: Tensor,
    pub x2: Tensor,
}

/// Views of `indices` for `epoch`, each sample on its own random stream.
pub fn view_batch(
    data: &Dataset,
    indices: &[usize],
    aug: &AugmentationConfig,
    seed: u64,
    epoch: usize,
) -> Result<ViewBatch> {
    let pairs = indices
        .par_iter()
        .map(|&i| make_views(&data.image(i), aug, seed, epoch_stream(epoch, i)))
        .collect::<Result<Vec<_>>>()?;
    let b = indices.len();
    let (oh, ow) = aug.output_size;
    let mut x = Vec::with_capacity(b * IMAGE_LEN);
    let mut x1 = Vec::with_capacity(b * 3 * oh * ow);
    let mut x2 = Vec::with_capacity(b * 3 * oh * ow);
    for p in pairs {
        x.extend(p.x.data);
        x1.extend(p.x1.data);
        x2.extend(p.x2.data);
    }
    Ok(ViewBatch {
        x: Tensor::from_vec(x, &[b, 3, 32, 32])?,
        x1: Tensor::from_vec(x1, &[b, 3, oh, ow])?,
        x2: Tensor::from_vec(x2, &[b, 3, oh, ow])?,
    })
}

/// The objective each model kind optimizes on one batch of views.
pub fn pretrain_loss(model: &Model, batch: &ViewBatch, w: f64, target: DaeTarget) -> Result<Loss<f32>> {
    let dae = |r1: &Tensor, r2: &Tensor| match target {
        DaeTarget::Clean => dae_loss(&batch.x, r1, r2),
        DaeTarget::Augmented => dae_loss_pair(&batch.x1, &batch.x2, r1, r2),
    };
    match model.kind {
        ModelKind::Simsiam => {
            let o = model.simsiam_forward(&batch.x1, &batch.x2, Mode::Train)?;
            simsiam_loss(&o.p1, &o.p2, &o.z1, &o.z2)
        }
        ModelKind::Dae => {
            let o = model.dae_forward(&batch.x1, &batch.x2, Mode::Train)?;
            dae(&o.r1, &o.r2)
        }
        ModelKind::Sidae => {
            let o = model.sidae_forward(&batch.x1, &batch.x2, Mode::Train)?;
            let s = &o.siamese;
            let si = simsiam_loss(&s.p1, &s.p2, &s.z1, &s.z2)?;
            let rec = dae(&o.reconstruction.r1, &o.reconstruction.r2)?;
            sidae_loss(w, &si, &rec)
        }
        ModelKind::Supervised => Err(Error::Contract("supervised models are not pre-trained".into())),
    }
}

/// Epoch counter, step counter, optimizer state and metrics of a run.
///
/// Augmentation and shuffling draw from streams keyed by `(seed, epoch,
/// index)`, so no generator state needs saving to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    pub sgd: Sgd,
    pub history: Vec<MetricsRow>,
}

impl TrainState {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        TrainState {
            epoch: 0,
            step: 0,
            sgd: Sgd::from_config(cfg),
            history: Vec::new(),
        }
    }

    /// Checkpoint holding the model and the optimizer's momentum buffers.
    pub fn checkpoint(&self, model: &Model, config: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::capture(model, self.epoch, self.step, config);
        ck.entries.extend(self.sgd.entries(&model.named_parameters()));
        ck
    }

    /// Restores `model` from `ck` and rebuilds the matching state.
    pub fn resume(model: &Model, ck: &Checkpoint, cfg: &OptimizerConfig, history: Vec<MetricsRow>) -> Result<Self> {
        ck.restore(model)?;
        let mut sgd = Sgd::from_config(cfg);
        sgd.load_entries(ck, &model.named_parameters())?;
        let epoch = ck.header.epoch;
        Ok(TrainState {
            epoch,
            step: ck.header.step,
            sgd,
            history: history.into_iter().filter(|r| r.epoch <= epoch).collect(),
        })
    }
}

pub fn steps_per_epoch(samples: usize, batch_size: usize) -> Result<usize> {
    let steps = samples / batch_size;
    if steps == 0 {
        return Err(Error::Config(format!(
            "pretrain.batch_size = {batch_size} exceeds the {samples} pre-training samples"
        )));
    }
    Ok(steps)
}

/// Epoch `state.epoch + 1`: shuffled full batches (the incomplete tail is
/// dropped), cosine learning rate per step.
pub fn pretrain_epoch(
    model: &Model,
    state: &mut TrainState,
    data: &Dataset,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<MetricsRow> {
    let opt = &cfg.optimizer;
    let per_epoch = steps_per_epoch(data.len(), opt.batch_size)?;
    let total = per_epoch * opt.epochs;
    let epoch = state.epoch + 1;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream_rng(seed ^ SHUFFLE_KEY, epoch as u64));
    let params = model.named_parameters();
    let (mut sum_total, mut sum_si, mut sum_dae) = (0.0, 0.0, 0.0);
    let mut lr = opt.lr0;
    for chunk in order.chunks_exact(opt.batch_size) {
        let batch = view_batch(data, chunk, &cfg.augmentation, seed, epoch)?;
        lr = opt.learning_rate(state.step, total)?;
        let loss = pretrain_loss(model, &batch, cfg.w, cfg.dae_target)?;
        if !loss.breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: state.step,
            });
        }
        zero_grads(&params);
        loss.value.backward()?;
        state.sgd.step(&params, lr)?;
        state.step += 1;
        sum_total += loss.breakdown.total;
        sum_si += loss.breakdown.l_si.unwrap_or(0.0);
        sum_dae += loss.breakdown.l_dae.unwrap_or(0.0);
    }
    state.epoch = epoch;
    let n = per_epoch as f64;
    let row = MetricsRow {
        epoch,
        step: state.step,
        lr,
        loss_total: Some(sum_total / n),
        loss_si: model.kind.has_predictor().then_some(sum_si / n),
        loss_dae: model.kind.has_decoder().then_some(sum_dae / n),
        split: "pretrain".into(),
        accuracy: None,
    };
    state.history.push(row.clone());
    Ok(row)
}

/// Runs the remaining epochs, calling `on_checkpoint` after every epoch in
/// [`checkpoint_epochs`].
pub fn pretrain(
    model: &Model,
    state: &mut TrainState,
    data: &Dataset,
    cfg: &PretrainConfig,
    seed: u64,
    mut on_checkpoint: impl FnMut(&Model, &TrainState) -> Result<()>,
) -> Result<()> {
    if !(0.0..=1.0).contains(&cfg.w) {
        return Err(Error::Config(format!("model.w = {} not in [0, 1]", cfg.w)));
    }
    if cfg.checkpoint_interval == 0 {
        return Err(Error::Config("pretrain.checkpoint_interval must be positive".into()));
    }
    while state.epoch < cfg.optimizer.epochs {
        pretrain_epoch(model, state, data, cfg, seed)?;
        if state.epoch.is_multiple_of(cfg.checkpoint_interval) || state.epoch == cfg.optimizer.epochs {
            on_checkpoint(model, state)?;
        }
    }
    Ok(())
}

/// Multiples of `interval`, plus the final epoch.
pub fn checkpoint_epochs(epochs: usize, interval: usize) -> Vec<usize> {
    (1..=epochs).filter(|&e| (interval > 0 && e % interval == 0) || e == epochs).collect()
}

// ---- probing --------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    Frozen,
    Finetune,
}

impl ProbeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeMode::Frozen => "frozen",
            ProbeMode::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(ProbeMode::Frozen),
            "finetune" => Ok(ProbeMode::Finetune),
            _ => Err(Error::Config(format!("unknown probe mode `{s}`"))),
        }
    }
}

/// Which representation the classifier reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeInput {
    Backbone,
    Projector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub optimizer: OptimizerConfig,
    pub mode: ProbeMode,
    pub input: ProbeInput,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            optimizer: OptimizerConfig::probe_default(),
            mode: ProbeMode::Frozen,
            input: ProbeInput::Backbone,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub test_accuracy: f64,
    pub test_predictions: Vec<usize>,
    pub history: Vec<MetricsRow>,
}

/// Encoder plus linear head.
pub struct Classifier<'a> {
    pub encoder: &'a Encoder,
    pub input: ProbeInput,
    pub head: ClassifierHead,
}

impl<'a> Classifier<'a> {
    pub fn new(encoder: &'a Encoder, input: ProbeInput, num_classes: usize, seed: u64) -> Self {
        let dim = match input {
            ProbeInput::Backbone => encoder.config.feature_dim(),
            ProbeInput::Projector => encoder.config.d_hid,
        };
        Classifier {
            encoder,
            input,
            head: ClassifierHead::new(dim, num_classes, seed),
        }
    }

    pub fn features(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.encoder.backbone.forward(x, mode)?;
        match self.input {
            ProbeInput::Backbone => Ok(h),
            ProbeInput::Projector => self.encoder.projector.forward(&h, mode),
        }
    }

    pub fn logits(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.head.forward(&self.features(x, mode)?)
    }

    /// Encoder-side parameters feeding the head.
    pub fn encoder_parameters(&self) -> Vec<(String, Tensor)> {
        let mut p = backbone_parameters(&self.encoder.backbone);
        if self.input == ProbeInput::Projector {
            p.extend(projector_parameters(&self.encoder.projector));
        }
        p
    }

    pub fn encoder_buffers(&self) -> Vec<(String, &RunningStats<f32>)> {
        let mut b = backbone_buffers(&self.encoder.backbone);
        if self.input == ProbeInput::Projector {
            b.extend(projector_buffers(&self.encoder.projector));
        }
        b
    }
}

pub const EVAL_BATCH: usize = 256;

pub fn argmax_rows(logits: &[f32], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// `correct / total`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len() as f64
}

/// Eval-mode class predictions for every sample, keeping the final partial
/// batch.
pub fn predict(classifier: &Classifier, data: &Dataset) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut predictions = Vec::with_capacity(data.len());
    for chunk in all.chunks(EVAL_BATCH) {
        let logits = classifier.logits(&data.batch(chunk), Mode::Eval)?;
        predictions.extend(argmax_rows(&logits.data(), data.num_classes));
    }
    Ok(predictions)
}

/// Top-1 accuracy over a labeled split.
pub fn evaluate_accuracy(classifier: &Classifier, data: &Dataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(accuracy(&predict(classifier, data)?, &data.batch_labels(&all)?))
}

/// Eval-mode features of every sample, row-major `(N, dim)`.
fn frozen_features(classifier: &Classifier, data: &Dataset, indices: &[usize]) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    for chunk in indices.chunks(EVAL_BATCH) {
        out.extend(classifier.features(&data.batch(chunk), Mode::Eval)?.data().iter());
    }
    Ok(out)
}

fn rows_tensor(features: &[f32], dim: usize, rows: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(rows.len() * dim);
    for &r in rows {
        data.extend_from_slice(&features[r * dim..(r + 1) * dim]);
    }
    Tensor::from_vec(data, &[rows.len(), dim]).expect("rows shape")
}

/// Trains a linear head on the labeled subset and reports test accuracy.
///
/// Frozen mode precomputes eval-mode features once, so neither parameters
/// nor running statistics of the encoder change. Fine-tune mode trains
/// encoder and head together in training mode.
pub fn probe(
    encoder: &Encoder,
    train: &Dataset,
    subset: &SubsetSpec,
    test: &Dataset,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    if subset.indices.is_empty() {
        return Err(Error::param("probe subset is empty"));
    }
    if let Some(&bad) = subset.indices.iter().find(|&&i| i >= train.len()) {
        return Err(Error::Config(format!(
            "subset index {bad} outside the {}-sample training split",
            train.len()
        )));
    }
    if train.num_classes != test.num_classes {
        return Err(Error::Config("train and test splits disagree on class count".into()));
    }
    let opt = &cfg.optimizer;
    let classifier = Classifier::new(encoder, cfg.input, train.num_classes, seed);
    let labels = train.batch_labels(&subset.indices)?;
    let per_epoch = subset.indices.len().div_ceil(opt.batch_size);
    let total = per_epoch * opt.epochs;
    let mut sgd = Sgd::from_config(opt);
    let mut step = 0;
    let mut history = Vec::new();

    let frozen = match cfg.mode {
        ProbeMode::Frozen => Some(frozen_features(&classifier, train, &subset.indices)?),
        ProbeMode::Finetune => None,
    };
    let dim = classifier.head.fc.input_dim();
    let mut params = classifier.head.fc_parameters();
    if cfg.mode == ProbeMode::Finetune {
        let mut all = classifier.encoder_parameters();
        all.extend(params);
        params = all;
    }

    for epoch in 1..=opt.epochs {
        let mut order: Vec<usize> = (0..subset.indices.len()).collect();
        order.shuffle(&mut stream_rng(seed ^ PROBE_KEY, epoch as u64));
        let (mut loss_sum, mut batches, mut lr) = (0.0, 0usize, opt.lr0);
        for chunk in order.chunks(opt.batch_size) {
            let y: Vec<usize> = chunk.iter().map(|&k| labels[k]).collect();
            let logits = match &frozen {
                Some(f) => classifier.head.forward(&rows_tensor(f, dim, chunk))?,
                None => {
                    if chunk.len() < 2 {
                        continue;
                    }
                    let idx: Vec<usize> = chunk.iter().map(|&k| subset.indices[k]).collect();
                    classifier.logits(&train.batch(&idx), Mode::Train)?
                }
            };
            lr = opt.learning_rate(step, total)?;
            let loss = cross_entropy(&logits, &y)?;
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            zero_grads(&params);
            loss.backward()?;
            sgd.step(&params, lr)?;
            step += 1;
            loss_sum += value;
            batches += 1;
        }
        history.push(MetricsRow {
            epoch,
            step,
            lr,
            loss_total: (batches > 0).then(|| loss_sum / batches as f64),
            loss_si: None,
            loss_dae: None,
            split: format!("probe_{}", cfg.mode.as_str()),
            accuracy: None,
        });
    }

    let test_predictions = predict(&classifier, test)?;
    let all: Vec<usize> = (0..test.len()).collect();
    let test_accuracy = accuracy(&test_predictions, &test.batch_labels(&all)?);
    history.push(MetricsRow {
        epoch: opt.epochs,
        step,
        lr: opt.lr0,
        loss_total: None,
        loss_si: None,
        loss_dae: None,
        split: "test".into(),
        accuracy: Some(test_accuracy),
    });
    Ok(ProbeResult {
        test_accuracy,
        test_predictions,
        history,
    })
}

/// Backbone and head trained from random initialization with the probe's
/// optimizer settings.
pub fn supervised_baseline(
    config: crate::models::EncoderConfig,
    train: &Dataset,
    subset: &SubsetSpec,
    test: &Dataset,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    let encoder = Encoder::new(config, seed)?;
    let cfg = ProbeConfig {
        mode: ProbeMode::Finetune,
        ..cfg.clone()
    };
    probe(&encoder, train, subset, test, &cfg, seed)
}

/// Mean and standard error `s / √n` (sample standard deviation); the
/// error is undefined for fewer than two values.
pub fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some((var / n as f64).sqrt()))
}

impl ClassifierHead {
    pub fn fc_parameters(&self) -> Vec<(String, Tensor)> {
        self.named_parameters()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{subset_indices, synthetic_split, Split};
    use crate::models::{BackboneKind, EncoderConfig};
    use crate::checkpoint::fingerprint;

    #[test]
    fn cosine_endpoints() {
        assert!((cosine_lr(0, 100, 0.03).unwrap() - 0.03).abs() < 1e-15);
        assert!(cosine_lr(100, 100, 0.03).unwrap().abs() < 1e-15);
        assert!((cosine_lr(50, 100, 0.03).unwrap() - 0.015).abs() < 1e-15);
        assert!(cosine_lr(0, 0, 0.03).is_err());
        let lrs: Vec<f64> = (0..=40).map(|s| cosine_lr(s, 40, 0.1).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    fn scalar_param(v: f32) -> Vec<(String, Tensor)> {
        vec![("p".into(), Tensor::parameter(vec![v], &[1]).unwrap())]
    }

    fn set_grad(params: &[(String, Tensor)], g: f32) {
        let (_, p) = &params[0];
        p.zero_grad();
        p.scale(g).sum().backward().unwrap();
    }

    #[test]
    fn sgd_vanilla_step() {
        let params = scalar_param(1.0);
        set_grad(&params, 1.0);
        let mut sgd = Sgd::new(0.0, 0.0);
        sgd.step(&params, 0.1).unwrap();
        assert!((params[0].1.item() - 0.9).abs() < 1e-7);
    }

    #[test]
    fn sgd_momentum_recurrence() {
        let params = scalar_param(0.0);
        let mut sgd = Sgd::new(0.9, 0.0);
        for _ in 0..2 {
            set_grad(&params, 2.0);
            sgd.step(&params, 0.1).unwrap();
        }
        assert!((sgd.velocity()[0][0] - 1.9 * 2.0).abs() < 1e-6);
        assert!((params[0].1.item() + 0.1 * (2.0 + 3.8)).abs() < 1e-6);
    }

    #[test]
    fn sgd_weight_decay_closed_form() {
        // Zero gradient, no momentum: θ_k = (1 − lr·λ)^k θ_0.
        let params = scalar_param(2.0);
        let mut sgd = Sgd::new(0.0, 0.5);
        for _ in 0..5 {
            set_grad(&params, 0.0);
            sgd.step(&params, 0.1).unwrap();
        }
        let expected = 2.0 * (1.0f32 - 0.05).powi(5);
        assert!((params[0].1.item() - expected).abs() < 1e-6);
    }

    #[test]
    fn sgd_requires_gradients() {
        let params = scalar_param(1.0);
        let mut sgd = Sgd::new(0.9, 0.0);
        assert!(matches!(sgd.step(&params, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn mean_and_standard_error() {
        let (m, s) = mean_stderr(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        assert!((m - 0.3).abs() < 1e-12);
        let sd = (0.025f64).sqrt();
        assert!((s.unwrap() - sd / 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_stderr(&[0.7]), (0.7, None));
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]), 1.0);
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        assert!((accuracy(&vec![4; 100], &labels) - 0.1).abs() < 1e-12);
        assert_eq!(argmax_rows(&[0.1, 0.9, 0.3, 0.2, 0.0, 0.1], 3), vec![1, 0]);
    }

    #[test]
    fn accuracy_matches_confusion_matrix_recount() {
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let predictions: Vec<usize> = (0..60).map(|i| (i * 7 / 5) % 3).collect();
        let mut confusion = [[0usize; 3]; 3];
        for (&l, &p) in labels.iter().zip(&predictions) {
            confusion[l][p] += 1;
        }
        let diagonal: usize = (0..3).map(|c| confusion[c][c]).sum();
        let total: usize = confusion.iter().flatten().sum();
        assert_eq!(accuracy(&predictions, &labels), diagonal as f64 / total as f64);
        assert_eq!(accuracy(&labels, &labels), 1.0);
        let constant = vec![0; 60];
        assert!((accuracy(&constant, &labels) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_epoch_schedule() {
        assert_eq!(checkpoint_epochs(200, 25), vec![25, 50, 75, 100, 125, 150, 175, 200]);
        assert_eq!(checkpoint_epochs(5, 2), vec![2, 4, 5]);
    }

    #[test]
    fn frozen_probe_leaves_encoder_untouched() {
        let enc = Encoder::new(EncoderConfig::new(BackboneKind::Tiny, 16).unwrap(), 0).unwrap();
        let train = synthetic_split(8, 2, 0, Split::Train).unwrap();
        let test = synthetic_split(4, 2, 0, Split::Test).unwrap();
        let subset = subset_indices("synthetic", train.len(), 1.0, 0).unwrap();
        let c = Classifier::new(&enc, ProbeInput::Backbone, 2, 0);
        let before = fingerprint(&c.encoder_parameters(), &c.encoder_buffers());
        let cfg = ProbeConfig {
            optimizer: OptimizerConfig {
                epochs: 3,
                batch_size: 4,
                ..OptimizerConfig::probe_default()
            },
            ..ProbeConfig::default()
        };
        let r = probe(&enc, &train, &subset, &test, &cfg, 0).unwrap();
        assert!((0.0..=1.0).contains(&r.test_accuracy));
        assert_eq!(fingerprint(&c.encoder_parameters(), &c.encoder_buffers()), before);

        let ft = ProbeConfig {
            mode: ProbeMode::Finetune,
            ..cfg
        };
        probe(&enc, &train, &subset, &test, &ft, 0).unwrap();
        assert_ne!(fingerprint(&c.encoder_parameters(), &c.encoder_buffers()), before);
    }
}
