use std::fs;

use sidae::checkpoint::{fingerprint, Checkpoint};
use sidae::data::{subset_indices, synthetic_split, Split};
use sidae::experiment::{checkpoint_dir, run_pretrain};
use sidae::models::{BackboneKind, Encoder, EncoderConfig, Model, ModelKind};
use sidae::train::{
    cosine_lr, evaluate_accuracy, predict, pretrain_epoch, probe, supervised_baseline, Classifier, OptimizerConfig,
    PretrainConfig, ProbeConfig, ProbeInput, TrainState,
};
use sidae::ExperimentConfig;

fn tiny(kind: ModelKind, seed: u64) -> Model {
    Model::new(kind, EncoderConfig::new(BackboneKind::Tiny, 32).unwrap(), seed).unwrap()
}

fn short_pretrain(epochs: usize) -> PretrainConfig {
    PretrainConfig {
        optimizer: OptimizerConfig {
            lr0: 0.05,
            batch_size: 16,
            epochs,
            ..OptimizerConfig::pretrain_default()
        },
        checkpoint_interval: 1,
        ..PretrainConfig::default()
    }
}

fn values(model: &Model) -> Vec<Vec<f32>> {
    model.named_parameters().iter().map(|(_, t)| t.to_vec()).collect()
}

#[test]
fn resume_matches_uninterrupted_training() {
    let data = synthetic_split(16, 2, 1, Split::Unlabeled).unwrap();
    let cfg = short_pretrain(2);

    let straight = tiny(ModelKind::Sidae, 3);
    let mut state = TrainState::new(&cfg.optimizer);
    pretrain_epoch(&straight, &mut state, &data, &cfg, 3).unwrap();
    pretrain_epoch(&straight, &mut state, &data, &cfg, 3).unwrap();

    let first = tiny(ModelKind::Sidae, 3);
    let mut partial = TrainState::new(&cfg.optimizer);
    pretrain_epoch(&first, &mut partial, &data, &cfg, 3).unwrap();
    let bytes = partial.checkpoint(&first, serde_json::Value::Null).to_bytes();

    let resumed = tiny(ModelKind::Sidae, 99);
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let mut state2 = TrainState::resume(&resumed, &ck, &cfg.optimizer, partial.history.clone()).unwrap();
    pretrain_epoch(&resumed, &mut state2, &data, &cfg, 3).unwrap();

    assert_eq!(state2.step, state.step);
    for (a, b) in values(&straight).iter().zip(values(&resumed)) {
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }
}

#[test]
fn learning_rate_trace_is_the_cosine_curve() {
    let data = synthetic_split(16, 2, 1, Split::Unlabeled).unwrap();
    let cfg = short_pretrain(3);
    let model = tiny(ModelKind::Simsiam, 0);
    let mut state = TrainState::new(&cfg.optimizer);
    let total = 3 * (data.len() / 16);
    for _ in 0..3 {
        let row = pretrain_epoch(&model, &mut state, &data, &cfg, 0).unwrap();
        let expected = cosine_lr(row.step - 1, total, cfg.optimizer.lr0).unwrap();
        assert!((row.lr - expected).abs() < 1e-15);
    }
}

#[test]
fn training_loss_decreases() {
    let data = synthetic_split(32, 2, 2, Split::Unlabeled).unwrap();
    let cfg = short_pretrain(5);
    for kind in [ModelKind::Sidae, ModelKind::Dae, ModelKind::Simsiam] {
        let model = tiny(kind, 1);
        let mut state = TrainState::new(&cfg.optimizer);
        let mut losses = Vec::new();
        for _ in 0..5 {
            losses.push(pretrain_epoch(&model, &mut state, &data, &cfg, 1).unwrap().loss_total.unwrap());
        }
        assert!(losses[4] < losses[0], "{kind:?}: {losses:?}");
    }
}

#[test]
fn interrupted_run_regenerates_identical_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_toml_str(
        r#"
[model]
backbone = "tiny"
d_hid = 32
[data]
dataset = "synthetic"
[data.synthetic]
num_classes = 2
pretrain_per_class = 16
[pretrain]
batch_size = 16
epochs = 2
checkpoint_interval = 1
[run]
seeds = [0]
"#,
    )
    .unwrap();
    cfg.run.out_dir = tmp.path().to_path_buf();
    let dir = run_pretrain(&cfg).unwrap();
    let last = checkpoint_dir(&dir, 0).join("epoch_0002.ckpt");
    let metrics = dir.join("seed_0/metrics.csv");
    let (ck_bytes, metric_bytes) = (fs::read(&last).unwrap(), fs::read(&metrics).unwrap());
    fs::remove_file(&last).unwrap();
    run_pretrain(&cfg).unwrap();
    assert_eq!(fs::read(&last).unwrap(), ck_bytes);
    assert_eq!(fs::read(&metrics).unwrap(), metric_bytes);

    let mut other = cfg.clone();
    other.pretrain.lr0 = 0.1;
    assert!(matches!(run_pretrain(&other), Err(sidae::Error::Config(_))));
}

#[test]
fn untrained_classifier_sits_at_chance() {
    let test = synthetic_split(20, 10, 4, Split::Test).unwrap();
    let enc = Encoder::new(EncoderConfig::new(BackboneKind::Tiny, 32).unwrap(), 0).unwrap();
    let c = Classifier::new(&enc, ProbeInput::Backbone, 10, 0);
    let acc = evaluate_accuracy(&c, &test).unwrap();
    assert!((0.0..=0.25).contains(&acc), "{acc}");
    let predictions = predict(&c, &test).unwrap();
    let correct = predictions.iter().enumerate().filter(|(i, &p)| test.label(*i) == Some(p)).count();
    assert_eq!(acc, correct as f64 / test.len() as f64);
}

#[test]
fn supervised_baseline_beats_frozen_random_backbone() {
    let train = synthetic_split(40, 4, 5, Split::Train).unwrap();
    let test = synthetic_split(20, 4, 5, Split::Test).unwrap();
    let subset = subset_indices("synthetic", train.len(), 1.0, 0).unwrap();
    let config = EncoderConfig::new(BackboneKind::Tiny, 32).unwrap();
    let cfg = ProbeConfig {
        optimizer: OptimizerConfig {
            epochs: 10,
            batch_size: 32,
            ..OptimizerConfig::probe_default()
        },
        ..ProbeConfig::default()
    };
    let sup = supervised_baseline(config, &train, &subset, &test, &cfg, 0).unwrap();
    let again = supervised_baseline(config, &train, &subset, &test, &cfg, 0).unwrap();
    assert_eq!(sup, again);
    let frozen = probe(&Encoder::new(config, 0).unwrap(), &train, &subset, &test, &cfg, 0).unwrap();
    assert!(sup.test_accuracy >= frozen.test_accuracy, "{} < {}", sup.test_accuracy, frozen.test_accuracy);
}

#[test]
fn checkpoint_restores_exact_weights() {
    let model = tiny(ModelKind::Sidae, 7);
    let ck = Checkpoint::capture(&model, 3, 42, serde_json::json!({"k": 1}));
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("x.ckpt");
    ck.save(&path).unwrap();
    let other = tiny(ModelKind::Sidae, 8);
    let print = |m: &Model| fingerprint(&m.named_parameters(), &m.named_buffers());
    assert_ne!(print(&model), print(&other));
    Checkpoint::load(&path).unwrap().restore(&other).unwrap();
    assert_eq!(print(&model), print(&other));
    assert!(Checkpoint::load(&path).unwrap().restore(&tiny(ModelKind::Dae, 0)).is_err());
}
