//! Run directories, multi-seed pre-training, probing and report tables.
//!
//! ```text
//! <out_dir>/<run_name>/
//!     config.toml
//!     subset_<dataset>_f<fraction>_s<seed>.toml
//!     results.csv
//!     seed_<s>/metrics.csv
//!     seed_<s>/checkpoints/epoch_XXXX.ckpt
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{available_epochs, checkpoint_path, Checkpoint};
use crate::config::ExperimentConfig;
use crate::data::{self, subset_indices, synthetic_split, Dataset, DatasetName, Split, SubsetSpec};
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind};
use crate::train::{self, mean_stderr, read_metrics, write_metrics, ProbeMode, TrainState};

pub const CONFIG_FILE: &str = "config.toml";
pub const RESULTS_FILE: &str = "results.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESULTS_HEADER: [&str; 9] = [
    "model",
    "dataset",
    "fraction",
    "mode",
    "w",
    "d_hid",
    "pretrain_epochs",
    "seed",
    "accuracy",
];

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

pub fn checkpoint_dir(run_dir: &Path, seed: u64) -> PathBuf {
    seed_dir(run_dir, seed).join("checkpoints")
}

// ---- data -----------------------------------------------------------------

/// Images used for pre-training: STL-10's unlabeled split, otherwise the
/// training split.
pub fn load_pretrain_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let s = &cfg.data.synthetic;
    match cfg.data.dataset {
        DatasetName::Synthetic => synthetic_split(s.pretrain_per_class, s.num_classes, s.seed, Split::Unlabeled),
        DatasetName::Stl10 => data::load(&cfg.data.root, DatasetName::Stl10, Split::Unlabeled),
        name => data::load(&cfg.data.root, name, Split::Train),
    }
}

/// Labeled train and test splits of the downstream dataset.
pub fn load_probe_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let s = &cfg.data.synthetic;
    match cfg.data.probe_dataset() {
        DatasetName::Synthetic => Ok((
            synthetic_split(s.train_per_class, s.num_classes, s.seed, Split::Train)?,
            synthetic_split(s.test_per_class, s.num_classes, s.seed, Split::Test)?,
        )),
        name => Ok((
            data::load(&cfg.data.root, name, Split::Train)?,
            data::load(&cfg.data.root, name, Split::Test)?,
        )),
    }
}

// ---- pre-training ---------------------------------------------------------

/// The part of a config that determines checkpoint contents.
fn identity(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        run: Default::default(),
        probe: Default::default(),
        ..cfg.clone()
    }
}

fn identity_json(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(identity(cfg)).expect("config serializes")
}

/// Creates the run directory and echoes the config; an existing directory
/// must hold a config with the same pre-training identity.
pub fn prepare_run_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    let path = dir.join(CONFIG_FILE);
    if path.exists() {
        let existing = ExperimentConfig::load(&path)?;
        if identity(&existing) != identity(cfg) {
            return Err(Error::Config(format!(
                "{} belongs to a different configuration",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(&dir)?;
    fs::write(&path, cfg.to_toml())?;
    Ok(dir)
}

/// Pre-trains every configured seed, resuming from the latest checkpoint of
/// each. Returns the run directory.
pub fn run_pretrain(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = prepare_run_dir(cfg)?;
    let data = if cfg.model.kind == ModelKind::Supervised {
        None
    } else {
        Some(load_pretrain_data(cfg)?)
    };
    let seeds = &cfg.run.seeds;
    if cfg.run.seeds_parallel && seeds.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| {
                    let (dir, data) = (&dir, data.as_ref());
                    s.spawn(move || pretrain_seed(cfg, data, dir, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
    } else {
        for &seed in seeds {
            pretrain_seed(cfg, data.as_ref(), &dir, seed)?;
        }
    }
    Ok(dir)
}

/// One seed of a run. Supervised runs only store their initialization as
/// epoch 0.
pub fn pretrain_seed(cfg: &ExperimentConfig, data: Option<&Dataset>, run_dir: &Path, seed: u64) -> Result<()> {
    let ck_dir = checkpoint_dir(run_dir, seed);
    fs::create_dir_all(&ck_dir)?;
    let metrics_path = seed_dir(run_dir, seed).join(METRICS_FILE);
    let model = Model::new(cfg.model.kind, cfg.encoder()?, seed)?;
    let header = identity_json(cfg);
    let pcfg = cfg.pretrain_config();

    let Some(data) = data else {
        let state = TrainState::new(&pcfg.optimizer);
        state.checkpoint(&model, header).save(&ck_dir.join(crate::checkpoint::checkpoint_file_name(0)))?;
        return write_metrics(&metrics_path, &[]);
    };

    let mut state = match available_epochs(&ck_dir).last() {
        Some(&epoch) => {
            let ck = Checkpoint::load(&checkpoint_path(&ck_dir, epoch)?)?;
            if ck.header.config != header {
                return Err(Error::Config(format!(
                    "checkpoint {} was written by a different configuration",
                    ck_dir.display()
                )));
            }
            let history = if metrics_path.exists() {
                read_metrics(&metrics_path)?
            } else {
                Vec::new()
            };
            TrainState::resume(&model, &ck, &pcfg.optimizer, history)?
        }
        None => TrainState::new(&pcfg.optimizer),
    };

    let outcome = train::pretrain(&model, &mut state, data, &pcfg, seed, |m, st| {
        let path = ck_dir.join(crate::checkpoint::checkpoint_file_name(st.epoch));
        st.checkpoint(m, header.clone()).save(&path)?;
        write_metrics(&metrics_path, &st.history)
    });
    write_metrics(&metrics_path, &state.history)?;
    outcome
}

// ---- probing --------------------------------------------------------------

/// Which checkpoints to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochSelect {
    All,
    Last,
    Epoch(usize),
}

impl EpochSelect {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(EpochSelect::All),
            "last" => Ok(EpochSelect::Last),
            n => n
                .parse()
                .map(EpochSelect::Epoch)
                .map_err(|_| Error::Config(format!("--at-epoch must be all, last or a number, got {n:?}"))),
        }
    }

    fn resolve(self, dir: &Path) -> Result<Vec<usize>> {
        let available = available_epochs(dir);
        match self {
            EpochSelect::All if !available.is_empty() => Ok(available),
            EpochSelect::Last if !available.is_empty() => Ok(vec![*available.last().expect("nonempty")]),
            EpochSelect::Epoch(e) => checkpoint_path(dir, e).map(|_| vec![e]),
            _ => Err(Error::MissingCheckpoint {
                dir: dir.to_path_buf(),
                requested: 0,
                available,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub dataset: String,
    pub fraction: f64,
    pub mode: String,
    pub w: Option<f64>,
    pub d_hid: usize,
    pub pretrain_epochs: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeRequest {
    pub fraction: Option<f64>,
    pub mode: Option<ProbeMode>,
    pub seeds: Option<Vec<u64>>,
}

/// Dataset label used in results: the pre-training dataset, or
/// `pretrain>probe` when they differ.
fn dataset_label(cfg: &ExperimentConfig) -> String {
    let (pre, down) = (cfg.data.dataset, cfg.data.probe_dataset());
    if pre == down {
        pre.to_string()
    } else {
        format!("{pre}>{down}")
    }
}

/// Loads the persisted subset for this fraction, creating it on first use.
pub fn subset_for(run_dir: &Path, cfg: &ExperimentConfig, train_len: usize) -> Result<SubsetSpec> {
    let name = cfg.data.probe_dataset().as_str();
    let fraction = cfg.data.labeled_fraction;
    let path = run_dir.join(format!("subset_{name}_f{fraction}_s{}.toml", cfg.data.subset_seed));
    if path.exists() {
        let spec = SubsetSpec::load(&path)?;
        if spec.indices.iter().any(|&i| i >= train_len) {
            return Err(Error::Config(format!("{} does not fit the training split", path.display())));
        }
        return Ok(spec);
    }
    let spec = subset_indices(name, train_len, fraction, cfg.data.subset_seed)?;
    spec.save(&path)?;
    Ok(spec)
}

/// Probes each selected checkpoint of each seed and appends one row per
/// probe to the run's results file.
pub fn run_probe(run_dir: &Path, request: &ProbeRequest, at: EpochSelect) -> Result<Vec<ResultRow>> {
    let mut cfg = ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
    if let Some(f) = request.fraction {
        cfg.data.labeled_fraction = f;
    }
    if let Some(m) = request.mode {
        cfg.probe.mode = m;
    }
    if let Some(s) = &request.seeds {
        cfg.run.seeds = s.clone();
    }
    cfg.validate()?;
    let pcfg = cfg.probe_config();

    let mut plan = Vec::new();
    for &seed in &cfg.run.seeds {
        let dir = checkpoint_dir(run_dir, seed);
        for epoch in at.resolve(&dir)? {
            plan.push((seed, checkpoint_path(&dir, epoch)?));
        }
    }
    let (train, test) = load_probe_data(&cfg)?;
    let subset = subset_for(run_dir, &cfg, train.len())?;

    let mut rows = Vec::new();
    for (seed, path) in plan {
        let ck = Checkpoint::load(&path)?;
        let model = Model::new(cfg.model.kind, cfg.encoder()?, seed)?;
        ck.restore(&model)?;
        let result = train::probe(&model.encoder, &train, &subset, &test, &pcfg, seed)?;
        let row = ResultRow {
            model: cfg.model.kind.name().into(),
            dataset: dataset_label(&cfg),
            fraction: cfg.data.labeled_fraction,
            mode: pcfg.mode.as_str().into(),
            w: cfg.effective_w(),
            d_hid: cfg.model.d_hid,
            pretrain_epochs: ck.header.epoch,
            seed,
            accuracy: result.test_accuracy,
        };
        append_results(&run_dir.join(RESULTS_FILE), std::slice::from_ref(&row))?;
        rows.push(row);
    }
    Ok(rows)
}

fn schema_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn check_header(path: &Path, header: &csv::StringRecord) -> Result<()> {
    if header.iter().ne(RESULTS_HEADER) {
        return Err(schema_error(
            path,
            format!("header {:?}, expected {}", header.iter().collect::<Vec<_>>(), RESULTS_HEADER.join(",")),
        ));
    }
    Ok(())
}

pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
    if !fresh {
        check_header(path, csv::Reader::from_path(path)?.headers()?)?;
    }
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    if fresh && rows.is_empty() {
        w.write_record(RESULTS_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    check_header(path, r.headers()?)?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| schema_error(path, format!("row {}: {e}", i + 1))))
        .collect()
}

// ---- report ---------------------------------------------------------------

/// Mean and standard error of one group of results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub model: String,
    pub dataset: String,
    pub fraction: f64,
    pub mode: String,
    pub w: Option<f64>,
    pub d_hid: usize,
    pub pretrain_epochs: usize,
    pub n: usize,
    pub mean: f64,
    pub stderr: Option<f64>,
}

type GroupKey = (String, String, String, String, String, usize);

fn group_key(r: &ResultRow) -> GroupKey {
    (
        r.model.clone(),
        r.dataset.clone(),
        r.fraction.to_string(),
        r.mode.clone(),
        r.w.map(|w| w.to_string()).unwrap_or_default(),
        r.d_hid,
    )
}

/// One summary per configuration and pre-training epoch, seeds pooled.
pub fn summarize(rows: &[ResultRow]) -> Vec<Summary> {
    let mut groups: BTreeMap<(GroupKey, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((group_key(r), r.pretrain_epochs)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let acc: Vec<f64> = g.iter().map(|r| r.accuracy).collect();
            let (mean, stderr) = mean_stderr(&acc);
            let r = g[0];
            Summary {
                model: r.model.clone(),
                dataset: r.dataset.clone(),
                fraction: r.fraction,
                mode: r.mode.clone(),
                w: r.w,
                d_hid: r.d_hid,
                pretrain_epochs: r.pretrain_epochs,
                n: acc.len(),
                mean,
                stderr,
            }
        })
        .collect()
}

/// Summaries at the latest pre-training epoch of each configuration.
pub fn final_summaries(series: &[Summary]) -> Vec<Summary> {
    let mut last: BTreeMap<GroupKey, &Summary> = BTreeMap::new();
    for s in series {
        let key = (
            s.model.clone(),
            s.dataset.clone(),
            s.fraction.to_string(),
            s.mode.clone(),
            s.w.map(|w| w.to_string()).unwrap_or_default(),
            s.d_hid,
        );
        let slot = last.entry(key).or_insert(s);
        if s.pretrain_epochs > slot.pretrain_epochs {
            *slot = s;
        }
    }
    last.into_values().cloned().collect()
}

fn write_summaries(path: &Path, rows: &[Summary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cell(s: &Summary) -> String {
    match s.stderr {
        Some(e) => format!("{:.2} ({:.2})", 100.0 * s.mean, 100.0 * e),
        None => format!("{:.2}", 100.0 * s.mean),
    }
}

/// Plain-text table: one line per model and setting, one column per
/// dataset and labeled fraction.
pub fn render_table(rows: &[Summary]) -> String {
    let mut columns: Vec<(String, String)> = Vec::new();
    let mut lines: BTreeMap<String, BTreeMap<(String, String), String>> = BTreeMap::new();
    for s in rows {
        let col = (s.dataset.clone(), format!("{}%", 100.0 * s.fraction));
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        let mut label = format!("{} {}", s.model, s.mode);
        if s.model == ModelKind::Sidae.name() {
            if let Some(w) = s.w {
                label.push_str(&format!(" w={w}"));
            }
        }
        label.push_str(&format!(" d={}", s.d_hid));
        lines.entry(label).or_default().insert(col, cell(s));
    }
    columns.sort();
    let mut header = vec!["model".to_string()];
    header.extend(columns.iter().map(|(d, f)| format!("{d} {f}")));
    let mut table = vec![header];
    for (label, cells) in &lines {
        let mut line = vec![label.clone()];
        line.extend(columns.iter().map(|c| cells.get(c).cloned().unwrap_or_else(|| "-".into())));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|i| table.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &table {
        let padded: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Files written by [`report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub table_csv: PathBuf,
    pub table_txt: PathBuf,
    pub series_csv: PathBuf,
    pub w_sweep_csv: PathBuf,
}

/// Aggregates results files into the final-epoch table, the accuracy by
/// pre-training epoch series and the SidAE loss-weight sweep.
pub fn report(inputs: &[PathBuf], out_dir: &Path) -> Result<ReportFiles> {
    if inputs.is_empty() {
        return Err(Error::Config("report needs at least one results file".into()));
    }
    let mut rows = Vec::new();
    for path in inputs {
        if !path.exists() {
            return Err(Error::MissingData(path.clone()));
        }
        rows.extend(read_results(path)?);
    }
    fs::create_dir_all(out_dir)?;
    let series = summarize(&rows);
    let table = final_summaries(&series);
    let sweep: Vec<Summary> = table.iter().filter(|s| s.model == ModelKind::Sidae.name()).cloned().collect();
    let files = ReportFiles {
        table_csv: out_dir.join("table1.csv"),
        table_txt: out_dir.join("table1.txt"),
        series_csv: out_dir.join("fig_series.csv"),
        w_sweep_csv: out_dir.join("w_sweep.csv"),
    };
    write_summaries(&files.table_csv, &table)?;
    fs::write(&files.table_txt, render_table(&table))?;
    write_summaries(&files.series_csv, &series)?;
    write_summaries(&files.w_sweep_csv, &sweep)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, epochs: usize, seed: u64, accuracy: f64) -> ResultRow {
        ResultRow {
            model: model.into(),
            dataset: "cifar10".into(),
            fraction: 0.01,
            mode: "frozen".into(),
            w: (model == "sidae").then_some(0.5),
            d_hid: 2048,
            pretrain_epochs: epochs,
            seed,
            accuracy,
        }
    }

    #[test]
    fn epoch_select_parsing() {
        assert_eq!(EpochSelect::parse("all").unwrap(), EpochSelect::All);
        assert_eq!(EpochSelect::parse("last").unwrap(), EpochSelect::Last);
        assert_eq!(EpochSelect::parse("75").unwrap(), EpochSelect::Epoch(75));
        assert!(EpochSelect::parse("soon").is_err());
    }

    #[test]
    fn summaries_pool_seeds_per_epoch() {
        let mut rows = Vec::new();
        for (seed, acc) in [0.5, 0.6, 0.7, 0.4, 0.8].into_iter().enumerate() {
            rows.push(row("sidae", 200, seed as u64, acc));
            rows.push(row("sidae", 25, seed as u64, acc - 0.1));
        }
        rows.push(row("simsiam", 200, 0, 0.3));
        let series = summarize(&rows);
        assert_eq!(series.len(), 3);
        let table = final_summaries(&series);
        assert_eq!(table.len(), 2);
        let s = table.iter().find(|s| s.model == "sidae").unwrap();
        assert_eq!((s.pretrain_epochs, s.n), (200, 5));
        assert!((s.mean - 0.6).abs() < 1e-12);
        let single = table.iter().find(|s| s.model == "simsiam").unwrap();
        assert_eq!(single.stderr, None);
    }

    #[test]
    fn results_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RESULTS_FILE);
        append_results(&path, &[row("dae", 25, 1, 0.25)]).unwrap();
        append_results(&path, &[row("sidae", 25, 1, 0.5)]).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back, vec![row("dae", 25, 1, 0.25), row("sidae", 25, 1, 0.5)]);

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "model,dataset,accuracy\nsidae,cifar10,0.5\n").unwrap();
        assert!(matches!(read_results(&bad), Err(Error::Schema { .. })));
        assert!(matches!(append_results(&bad, &[]), Err(Error::Schema { .. })));
    }

    #[test]
    fn table_text_marks_missing_cells() {
        let mut other = row("dae", 200, 0, 0.4);
        other.dataset = "mnist".into();
        let text = render_table(&summarize(&[row("sidae", 200, 0, 0.5), other]));
        assert!(text.starts_with("model"));
        assert!(text.contains("50.00"));
        assert!(text.contains(" - ") || text.lines().any(|l| l.trim_end().ends_with('-')));
    }
}
