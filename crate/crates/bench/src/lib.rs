//! Deterministic inputs shared by the benchmarks.

use sidae::models::{BackboneKind, EncoderConfig, Model, ModelKind};
use sidae::train::{OptimizerConfig, PretrainConfig};
use sidae::Tensor;

/// A tensor filled with a fixed pseudo-random pattern in `[-0.5, 0.5)`.
pub fn pattern(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec((0..n).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).collect(), shape)
        .expect("shape matches data")
}

/// Trainable copy of [`pattern`].
pub fn pattern_parameter(shape: &[usize]) -> Tensor {
    Tensor::parameter(pattern(shape).to_vec(), shape).expect("shape matches data")
}

pub fn tiny_model(kind: ModelKind) -> Model {
    Model::new(kind, EncoderConfig::new(BackboneKind::Tiny, 64).expect("valid d_hid"), 0).expect("model builds")
}

/// Pre-training settings whose schedule never runs out during a benchmark.
pub fn endless_pretrain(batch_size: usize) -> PretrainConfig {
    PretrainConfig {
        optimizer: OptimizerConfig {
            batch_size,
            epochs: 1_000_000,
            ..OptimizerConfig::pretrain_default()
        },
        ..PretrainConfig::default()
    }
}
