use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod data;

use config::RunConfig;

/// Patch-based OCT fluid segmentation pipeline.
#[derive(Debug, Parser)]
#[command(name = "octpipe", version)]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags override values read from `--config`.
#[derive(Debug, Args)]
struct Overrides {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data_root: Option<String>,
    #[arg(long, global = true)]
    output_dir: Option<String>,
    /// Square size `N` or `WxH`.
    #[arg(long, global = true)]
    patch_size: Option<String>,
    #[arg(long, global = true)]
    overlap: Option<String>,
    /// `2d`, `2.5d`, `2.5d:R` or `3d`.
    #[arg(long, global = true)]
    depth_mode: Option<String>,
    /// `F` (full image) or `P` (patches).
    #[arg(long, global = true)]
    variant: Option<String>,
    /// `oracle`, `threshold` or `external`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Directory of `<id>_prob.mhd` files for the external backend.
    #[arg(long, global = true)]
    predictions: Option<String>,
    /// Report tag for the external backend.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Number of folds.
    #[arg(long, global = true)]
    folds: Option<String>,
    /// `macro` or `micro`.
    #[arg(long, global = true)]
    pooling: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    jobs: Option<String>,
    /// Any configuration key, e.g. `--set closing.radius=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print vendor and geometry of volumes.
    Info { paths: Vec<PathBuf> },
    /// Resize, normalise and denoise volumes into `output_dir/volumes`.
    Preprocess { ids: Vec<String> },
    /// Write the per-vendor fold plan.
    Folds,
    /// Cut a volume into patch batches under `output_dir/patches`.
    Patchify { volume: PathBuf },
    /// Merge patch or prediction batches into a probability volume.
    Stitch {
        #[arg(required = true)]
        batches: Vec<PathBuf>,
    },
    /// Cross-validated Dice evaluation.
    Evaluate {
        /// Run a single fold.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Merge evaluation CSVs into one table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Write a synthetic phantom dataset to `data_root`.
    Synth,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Pipeline(octpipe::Error),
}

impl From<octpipe::Error> for CliError {
    fn from(e: octpipe::Error) -> Self {
        CliError::Pipeline(e)
    }
}

fn resolve(opts: &Overrides) -> Result<RunConfig, String> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let flags = [
        ("data_root", &opts.data_root),
        ("output_dir", &opts.output_dir),
        ("grid.patch_size", &opts.patch_size),
        ("grid.overlap", &opts.overlap),
        ("depth_mode", &opts.depth_mode),
        ("variant", &opts.variant),
        ("backend.kind", &opts.backend),
        ("backend.predictions", &opts.predictions),
        ("backend.model", &opts.model),
        ("seed", &opts.seed),
        ("folds.k", &opts.folds),
        ("eval.pooling", &opts.pooling),
        ("jobs", &opts.jobs),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|e| format!("--{}: {e}", key.replace(['.', '_'], "-")))?;
        }
    }
    for kv in &opts.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.opts).map_err(CliError::Usage)?;
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    }
    match &cli.command {
        Command::Info { paths } => commands::info(&cfg, paths),
        Command::Preprocess { ids } => commands::preprocess(&cfg, ids),
        Command::Folds => commands::folds(&cfg),
        Command::Patchify { volume } => commands::patchify(&cfg, volume),
        Command::Stitch { batches } => commands::stitch_cmd(&cfg, batches),
        Command::Evaluate { fold } => commands::evaluate(&cfg, *fold),
        Command::Report { inputs } => commands::report(&cfg, inputs),
        Command::Synth => commands::synth(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("octpipe: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Pipeline(e)) => {
            eprintln!("octpipe: {e}");
            ExitCode::from(1)
        }
    }
}
