//! `m2r` — build datastores, decode, evaluate and sweep on the synthetic
//! benchmark.
//!
//! Exit status: 0 on success, 2 for invalid configuration or arguments,
//! 1 for failures while running.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use m2r_core::Mode;

use commands::StoreKind;
use config::{check_sweep_values, Axis, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "m2r", version, about = "Retrieval-augmented ASR decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run file; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// baseline, knn_only, icl_only or m2r.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Weight of the kNN distribution.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// kNN temperature.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Token neighbours per step.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Maximum number of in-context prompts.
    #[arg(long = "n-max", global = true)]
    n_max: Option<usize>,
    /// Total audio budget in seconds, test audio included.
    #[arg(long = "budget-s", global = true)]
    budget_s: Option<f64>,
    #[arg(long = "out-dir", global = true)]
    out_dir: Option<PathBuf>,
    /// Write `NA` instead of wall-clock numbers (reproducible outputs).
    #[arg(long = "no-timing", global = true)]
    no_timing: bool,
    /// Decode utterances in parallel.
    #[arg(long, global = true)]
    parallel: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build a sentence or token datastore and save it.
    Build {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        out: PathBuf,
        /// Build from an export stream instead of the synthetic training split.
        #[arg(long)]
        exports: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Decode the test split in one mode.
    Decode {
        #[command(flatten)]
        common: Common,
    },
    /// Score the configured modes and compare them against the baseline.
    Eval {
        /// Comma-separated modes; replaces `modes` from the run file.
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        modes: Option<Vec<Mode>>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate one mode over a list of parameter values.
    Sweep {
        #[arg(long)]
        axis: Option<Axis>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Sentence,
    Token,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        mode: common.mode,
        lambda: common.lambda,
        tau: common.tau,
        k: common.k,
        n_max: common.n_max,
        budget_s: common.budget_s,
        output_dir: common.out_dir.clone(),
        no_timing: common.no_timing,
        parallel: common.parallel,
    });
    Ok(cfg)
}

/// Configuration stage; failures here map to exit status 2.
fn prepare(command: &Command) -> Result<RunConfig> {
    let mut cfg = match command {
        Command::Build { common, .. } | Command::Decode { common } => load(common)?,
        Command::Eval { modes, common } => {
            let mut cfg = load(common)?;
            if let Some(modes) = modes {
                cfg.modes = modes.clone();
            }
            cfg
        }
        Command::Sweep { axis, values, common } => {
            let mut cfg = load(common)?;
            if let Some(axis) = axis {
                cfg.sweep.axis = Some(*axis);
            }
            if let Some(values) = values {
                cfg.sweep.values = values.clone();
            }
            let Some(axis) = cfg.sweep.axis else {
                anyhow::bail!("sweep needs an axis (--axis n_max|lambda|tau)");
            };
            check_sweep_values(axis, &cfg.sweep.values)?;
            cfg
        }
    };
    if let Command::Build {
        exports: Some(path), ..
    } = command
    {
        anyhow::ensure!(path.exists(), "export file {} does not exist", path.display());
        // Stores given in the run file are irrelevant to a build.
        cfg.stores = Default::default();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Build { kind, out, exports, .. } => {
            let kind = match kind {
                KindArg::Sentence => StoreKind::Sentence,
                KindArg::Token => StoreKind::Token,
            };
            print!("{}", commands::build(cfg, kind, exports.as_deref(), out)?);
        }
        Command::Decode { .. } => {
            let path = commands::decode(cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Eval { .. } => print!("{}", commands::eval(cfg)?),
        Command::Sweep { .. } => print!("{}", commands::sweep(cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match prepare(&cli.command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(&cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
