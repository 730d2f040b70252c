//! `pantcr`: batch entry point for synthesis, training, evaluation,
//! ablations, frequency demos, gradient checks and budget reports.
//!
//! Every invocation writes `run.json` (the resolved config plus the
//! subcommand arguments) into `--out`. Failures print one JSON object on
//! stderr and exit with 1 for invalid input or 2 for runtime failures.

pub mod commands;
pub mod config;
pub mod visuals;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use pantcr_core::{Error, Result};
use serde_json::{json, Value};

pub use config::RunConfig;

pub const RUN_FILE: &str = "run.json";
pub const THREADS_ENV: &str = "PANTCR_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "pantcr",
    version,
    about = "Joint pansharpening and thin-cloud removal"
)]
pub struct Cli {
    /// JSON config (a previous run.json is accepted).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dot-path override, e.g. `--set net.base_width=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "pantcr-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a seeded synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        #[arg(long)]
        test_reduced: Option<usize>,
        #[arg(long)]
        test_full: Option<usize>,
    },
    /// Train on a dataset's train split, selecting by val PSNR.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint (or the bicubic baseline) on one split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory; omit to score bicubic upsampling.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test_reduced")]
        split: String,
        /// Write per-pixel MSE maps and RGB previews.
        #[arg(long)]
        save_visuals: bool,
        /// MSE mapped to white in the error maps.
        #[arg(long, default_value_t = commands::DEFAULT_MSE_MAX)]
        mse_max: f64,
    },
    /// Train one model per ablation row.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated row names; defaults to every in-scope row.
        #[arg(long)]
        rows: Option<String>,
    },
    /// Amplitude/phase exchange between a clean and a cloudy image.
    FreqDemo {
        /// Dataset to draw the pair from; a procedural scene otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test_reduced")]
        split: String,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Finite-difference verification of the network blocks.
    Gradcheck {
        /// Comma-separated block names; defaults to all.
        #[arg(long)]
        blocks: Option<String>,
    },
    /// Parameter and FLOP counts of the configured network.
    Budget {
        #[arg(long, default_value_t = pantcr_net::budget::CANONICAL_SIZE)]
        size: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::FreqDemo { .. } => "freq-demo",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Budget { .. } => "budget",
        }
    }

    /// Flags that are sugar for config keys.
    fn config_sets(&self) -> Vec<String> {
        let mut sets = Vec::new();
        if let Command::Synth {
            scenes,
            train,
            val,
            test_reduced,
            test_full,
        } = self
        {
            let keys = [
                ("scenes", scenes),
                ("counts.train", train),
                ("counts.val", val),
                ("counts.test_reduced", test_reduced),
                ("counts.test_full", test_full),
            ];
            for (k, v) in keys {
                if let Some(v) = v {
                    sets.push(format!("{k}={v}"));
                }
            }
        }
        sets
    }
}

/// Resolves the config, records `run.json` and runs the subcommand.
pub fn run(cli: &Cli) -> Result<Value> {
    let mut sets = cli.sets.clone();
    sets.extend(cli.command.config_sets());
    let cfg = RunConfig::resolve(cli.config.as_deref(), &sets, cli.seed)?;
    fs::create_dir_all(&cli.out).map_err(|e| {
        Error::Argument(format!(
            "output dir {} not writable: {e}",
            cli.out.display()
        ))
    })?;
    write_json(
        &cli.out.join(RUN_FILE),
        &json!({
            "subcommand": cli.command.name(),
            "args": cli.command,
            "seed": cfg.seed,
            "config": cfg,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    let pool = thread_pool()?;
    pool.install(|| commands::dispatch(&cli.command, &cfg, &cli.out))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Argument(format!("{THREADS_ENV}={raw:?} is not a positive integer"))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        1
    } else {
        2
    }
}

pub fn error_json(kind: &str, message: &str, code: i32) -> Value {
    json!({ "error": { "kind": kind, "message": message }, "exit_code": code })
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Format(_) => "format",
        Error::Validation(_) => "validation",
        Error::Argument(_) => "argument",
        Error::Numeric(_) => "numeric",
        Error::Capacity(_) => "capacity",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Image(_) => "image",
    }
}

/// Parses `args`, runs, prints the result or error JSON and returns the
/// process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_json("usage", e.to_string().trim(), 1));
            return 1;
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).unwrap_or_default()
            );
            0
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_json(error_kind(&e), &e.to_string(), code));
            code
        }
    }
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
