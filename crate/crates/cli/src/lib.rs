//! Command-line front end for the MpoxMamba library.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use mpoxmamba::model::Ablation;

pub use commands::{bench_scan, summary_report, BenchRow, SummaryReport};
pub use config::{Precision, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mpoxmamba::Error),
    #[error("writing output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    /// 0 success, 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => e.exit_code(),
            CliError::Output(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mpoxmamba", version, about = "Grouped Mamba/CNN skin-lesion classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// key=value run configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Dataset root: one sub-folder of images per class.
    #[arg(long, global = true, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "NAME")]
    pub ablation: Option<Ablation>,
    /// Number of channel groups in each global branch.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub groups: Option<u8>,
    /// Output directory (train) or file (infer --cam).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer shapes, parameter and operation counts.
    Summary {
        /// Also tabulate every ablation variant.
        #[arg(long)]
        ladder: bool,
    },
    /// Stratified k-fold training; writes checkpoints, metrics.csv and histories.
    Train,
    /// Metrics of a checkpoint over a dataset.
    Eval,
    /// Classify one image.
    Infer {
        image: PathBuf,
        /// Write a Grad-CAM overlay PNG.
        #[arg(long)]
        cam: bool,
    },
    /// Selective-scan wall-time scaling.
    Bench {
        #[arg(long, default_value = "scan")]
        op: String,
        /// Comma-separated sequence lengths (each >= 64).
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096")]
        lengths: Vec<usize>,
    },
    /// Analytic versus finite-difference gradients.
    Gradcheck {
        /// Parameter coordinates sampled in the whole-model check.
        #[arg(long, default_value_t = 24)]
        samples: usize,
    },
}

impl Cli {
    /// Config file (or defaults) with command-line overrides applied.
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(a) = self.ablation {
            cfg.model = cfg.model.with_ablation(a);
        }
        if let Some(g) = self.groups {
            cfg.model.groups = g as usize;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(d) = &self.data {
            cfg.data_root = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::Summary { ladder } => commands::summary(&cfg, *ladder, out),
        Command::Train => commands::train(&cfg, out),
        Command::Eval => commands::eval(&cfg, required(&cli.checkpoint, "--checkpoint")?, out),
        Command::Infer { image, cam } => {
            let cam_out = cam.then(|| cli.out.clone().unwrap_or_else(|| commands::default_cam_path(image)));
            commands::infer(&cfg, required(&cli.checkpoint, "--checkpoint")?, image, cam_out.as_deref(), out)
        }
        Command::Bench { op, lengths } => commands::bench(op, lengths, out),
        Command::Gradcheck { samples } => commands::gradcheck(cfg.train.seed, *samples, out),
    }
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a std::path::Path, CliError> {
    v.as_deref().ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors go to stderr.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
