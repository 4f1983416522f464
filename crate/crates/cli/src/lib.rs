//! Argument parsing and command dispatch for the `sidae` binary.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | gradient check failure or runtime error |
//! | 2 | invalid configuration or arguments |
//! | 3 | missing data files |
//! | 4 | missing checkpoint |
//! | 5 | inconsistent results schema |

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sidae::data::DatasetName;
use sidae::experiment::{self, EpochSelect, ProbeRequest};
use sidae::gradcheck::{run_suite, standard_cases};
use sidae::models::{BackboneKind, ModelKind};
use sidae::train::ProbeMode;
use sidae::{Error, ExperimentConfig, Overrides};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_MISSING_DATA: u8 = 3;
pub const EXIT_MISSING_CHECKPOINT: u8 = 4;
pub const EXIT_SCHEMA: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "sidae", version, about = "Siamese denoising autoencoder experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-train every configured seed; resumes from existing checkpoints.
    Pretrain(PretrainArgs),
    /// Train linear heads on pre-trained checkpoints and append results.
    Probe(ProbeArgs),
    /// Aggregate results files into tables and plot data.
    Report(ReportArgs),
    /// Finite-difference check of every differentiable op and loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: Option<DatasetName>,
    #[arg(long, value_parser = parse_backbone)]
    pub backbone: Option<BackboneKind>,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub d_hid: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seeds_parallel: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Run directory written by `pretrain`.
    pub run_dir: PathBuf,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ProbeMode>,
    /// `all`, `last` or an epoch number.
    #[arg(long, default_value = "last", value_parser = parse_epoch)]
    pub at_epoch: EpochSelect,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub results: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

fn parse_dataset(s: &str) -> Result<DatasetName, String> {
    DatasetName::parse(s).map_err(|e| e.to_string())
}

fn parse_backbone(s: &str) -> Result<BackboneKind, String> {
    match s {
        "resnet18_cifar" | "resnet18" => Ok(BackboneKind::Resnet18Cifar),
        "tiny" => Ok(BackboneKind::Tiny),
        _ => Err(format!("unknown backbone {s:?} (resnet18_cifar, tiny)")),
    }
}

fn parse_mode(s: &str) -> Result<ProbeMode, String> {
    ProbeMode::parse(s).map_err(|e| e.to_string())
}

fn parse_epoch(s: &str) -> Result<EpochSelect, String> {
    EpochSelect::parse(s).map_err(|e| e.to_string())
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parameter(_) => EXIT_CONFIG,
        Error::MissingData(_) => EXIT_MISSING_DATA,
        Error::MissingCheckpoint { .. } => EXIT_MISSING_CHECKPOINT,
        Error::Schema { .. } => EXIT_SCHEMA,
        _ => EXIT_FAILURE,
    }
}

/// Resolved config for `pretrain`: file (or defaults) plus flag overrides.
pub fn pretrain_config(args: &PretrainArgs) -> sidae::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::resolved_default(),
    };
    cfg.apply(&Overrides {
        model: args.model,
        dataset: args.dataset,
        backbone: args.backbone,
        w: args.w,
        d_hid: args.d_hid,
        fraction: None,
        mode: None,
        epochs: args.epochs,
        seed: args.seed,
        seeds_parallel: args.seeds_parallel,
        out_dir: args.out_dir.clone(),
    })?;
    Ok(cfg)
}

/// Runs a command, printing human-readable progress, and returns the exit
/// code.
pub fn run(cli: Cli) -> u8 {
    let outcome = match cli.command {
        Command::Pretrain(args) => pretrain_config(&args).and_then(|cfg| {
            let dir = experiment::run_pretrain(&cfg)?;
            println!("pre-trained {} seed(s) into {}", cfg.run.seeds.len(), dir.display());
            Ok(0)
        }),
        Command::Probe(args) => {
            let request = ProbeRequest {
                fraction: args.fraction,
                mode: args.mode,
                seeds: args.seed.map(|s| vec![s]),
            };
            experiment::run_probe(&args.run_dir, &request, args.at_epoch).map(|rows| {
                for r in &rows {
                    println!(
                        "{} {} fraction={} mode={} epoch={} seed={} accuracy={:.4}",
                        r.model, r.dataset, r.fraction, r.mode, r.pretrain_epochs, r.seed, r.accuracy
                    );
                }
                println!(
                    "appended {} row(s) to {}",
                    rows.len(),
                    args.run_dir.join(experiment::RESULTS_FILE).display()
                );
                0
            })
        }
        Command::Report(args) => experiment::report(&args.results, &args.out_dir).map(|files| {
            print!("{}", std::fs::read_to_string(&files.table_txt).unwrap_or_default());
            println!("wrote report files to {}", args.out_dir.display());
            0
        }),
        Command::Gradcheck(args) => {
            let report = run_suite(&standard_cases(), args.trials, args.tolerance, args.seed);
            for case in &report.cases {
                println!("{case}");
            }
            let failed = report.failures().count();
            println!(
                "{} case(s), {failed} failure(s), tolerance {:e}, {:.1}s",
                report.cases.len(),
                report.tolerance,
                report.elapsed.as_secs_f64()
            );
            Ok(if failed == 0 { 0 } else { EXIT_FAILURE })
        }
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}
