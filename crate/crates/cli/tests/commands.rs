use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sidae::experiment::{read_results, RESULTS_FILE};

const TINY: &str = r#"
[model]
kind = "sidae"
backbone = "tiny"
d_hid = 32

[data]
dataset = "synthetic"
labeled_fraction = 0.05

[data.synthetic]
num_classes = 2
pretrain_per_class = 16
train_per_class = 40
test_per_class = 20

[pretrain]
batch_size = 16
epochs = 2
checkpoint_interval = 1

[probe]
epochs = 3
batch_size = 8

[run]
seeds = [0, 1]
"#;

fn sidae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sidae")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn pretrain_probe_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out_dir = tmp.path().join("runs");
    let out = sidae(&["pretrain", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let run = out_dir.join("sidae_synthetic_tiny_d32_w0.5");
    assert!(run.join("config.toml").exists());
    for seed in [0, 1] {
        let ck = run.join(format!("seed_{seed}/checkpoints"));
        assert!(ck.join("epoch_0001.ckpt").exists());
        assert!(ck.join("epoch_0002.ckpt").exists());
        assert!(run.join(format!("seed_{seed}/metrics.csv")).exists());
    }

    let out = sidae(&["probe", run.to_str().unwrap(), "--at-epoch", "all"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_results(&run.join(RESULTS_FILE)).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.mode == "frozen" && r.w == Some(0.5) && r.fraction == 0.05));
    assert!(run.join("subset_synthetic_f0.05_s0.toml").exists());

    let out = sidae(&["probe", run.to_str().unwrap(), "--mode", "finetune", "--seed", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_results(&run.join(RESULTS_FILE)).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!((rows[4].mode.as_str(), rows[4].pretrain_epochs), ("finetune", 2));

    let report = tmp.path().join("report");
    let results = run.join(RESULTS_FILE);
    let out = sidae(&["report", results.to_str().unwrap(), "--out-dir", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["table1.csv", "table1.txt", "fig_series.csv", "w_sweep.csv"] {
        assert!(report.join(f).exists(), "{f}");
    }
    let series = fs::read_to_string(report.join("fig_series.csv")).unwrap();
    assert_eq!(series.lines().count(), 1 + 3);
}

#[test]
fn invalid_config_exits_2_with_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[model]\nw = 2.0\n");
    let out = sidae(&["pretrain", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.w"));

    let cfg = write_config(tmp.path(), "[pretrain]\nlearning_rate = 0.1\n");
    let out = sidae(&["pretrain", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn missing_data_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!("[data]\ndataset = \"cifar10\"\nroot = {:?}\n", tmp.path().join("nothing")),
    );
    let out = sidae(&[
        "pretrain",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("runs").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_checkpoint_exits_4_listing_epochs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &TINY.replace("seeds = [0, 1]", "seeds = [0]"));
    let out_dir = tmp.path().join("runs");
    let out = sidae(&["pretrain", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let run = out_dir.join("sidae_synthetic_tiny_d32_w0.5");
    let out = sidae(&["probe", run.to_str().unwrap(), "--at-epoch", "75"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("[1, 2]"));
}

#[test]
fn inconsistent_schema_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("results.csv");
    fs::write(&bad, "model,accuracy\nsidae,0.5\n").unwrap();
    let out = sidae(&["report", bad.to_str().unwrap(), "--out-dir", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&out), 5);
}

#[test]
fn simsiam_checkpoints_have_no_decoder() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &TINY.replace("seeds = [0, 1]", "seeds = [0]"));
    let out_dir = tmp.path().join("runs");
    let out = sidae(&[
        "pretrain",
        "--config",
        cfg.to_str().unwrap(),
        "--model",
        "simsiam",
        "--epochs",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let path = out_dir.join("simsiam_synthetic_tiny_d32/seed_0/checkpoints/epoch_0001.ckpt");
    let ck = sidae::checkpoint::Checkpoint::load(&path).unwrap();
    assert!(ck.entries.iter().all(|e| !e.name.contains("decoder")));
    assert!(ck.entries.iter().any(|e| e.name.starts_with("param/predictor")));
}

#[test]
fn library_and_binary_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let text = TINY.replace("seeds = [0, 1]", "seeds = [3]").replace("epochs = 2", "epochs = 1");
    let cfg = write_config(tmp.path(), &text);
    let bin_dir = tmp.path().join("bin");
    let out = sidae(&["pretrain", "--config", cfg.to_str().unwrap(), "--out-dir", bin_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);

    let mut lib_cfg = sidae::ExperimentConfig::from_toml_str(&text).unwrap();
    lib_cfg.run.out_dir = tmp.path().join("lib");
    let lib_run = sidae::experiment::run_pretrain(&lib_cfg).unwrap();
    let name = "seed_3/checkpoints/epoch_0001.ckpt";
    let bin_run = bin_dir.join(lib_run.file_name().unwrap());
    assert_eq!(fs::read(bin_run.join(name)).unwrap(), fs::read(lib_run.join(name)).unwrap());
}

#[test]
fn gradcheck_passes() {
    let out = sidae(&["gradcheck", "--trials", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failure(s)"));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        sidae::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 3);
}
