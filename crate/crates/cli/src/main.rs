//! `errmine`: stage-oriented driver for error-maximizer active learning.
//!
//! ```text
//! errmine --config configs/desk.toml --out runs/desk gen-data
//! errmine --config configs/desk.toml --out runs/desk train
//! errmine --config configs/desk.toml --out runs/desk mine
//! errmine --config configs/desk.toml --out runs/desk retrain --alphas 1,0.99,0.95
//! errmine --config configs/desk.toml --out runs/desk eval --trim 0.001
//! errmine --config configs/desk.toml --out runs/desk loop
//! ```
//!
//! Exit codes: 0 success, 1 invalid configuration or inputs, 2 runtime failure.

mod manifest;
mod stages;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use errmine::config::RunConfig;
use errmine::par::Exec;

use crate::stages::{Ctx, RetrainArgs};

/// An error in the configuration, the command line or an input artifact.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

#[derive(Debug, Parser)]
#[command(name = "errmine", version, about = "Error-maximizer active learning for regression surrogates")]
struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory. Overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the hardware parallelism. Results do not
    /// depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Derive every seed in the config from this one value.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample and label the training set S0 and the test set.
    GenData,
    /// Train the surrogate on a labeled set.
    Train {
        /// Training set; defaults to <out>/S0.csv.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Mine local maximizers of the squared error.
    Mine {
        /// Defaults to <out>/model.ckpt.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Seed pool; defaults to <out>/S0.csv.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Round index: names the output and tightens the ascent schedule.
        #[arg(long, default_value_t = 0)]
        round: usize,
    },
    /// Retrain one model per α on the base and mined sets.
    Retrain {
        /// Supplies architecture and init seed; defaults to <out>/model.ckpt.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Defaults to <out>/S0.csv.
        #[arg(long)]
        base: Option<PathBuf>,
        /// Defaults to <out>/M0.csv.
        #[arg(long)]
        mined: Option<PathBuf>,
        /// Defaults to <out>/test.csv.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Comma-separated α values; defaults to `loop.alphas`.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Report MSE and MAE of a checkpoint on a labeled set.
    Eval {
        /// Defaults to <out>/model.ckpt.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Defaults to <out>/test.csv.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also report metrics with this fraction of worst samples removed.
        #[arg(long)]
        trim: Option<f64>,
        /// Defaults to <out>/eval.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the full multi-round loop.
    Loop,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| ValidationError(format!("reading {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| ValidationError(format!("{}: {e}", path.display())).into())
}

fn setup_exec(threads: Option<usize>) -> Result<Exec> {
    if threads == Some(0) {
        return Err(ValidationError("--threads must be positive".into()).into());
    }
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| anyhow::anyhow!("building the thread pool: {e}"))?;
        }
        Ok(Exec::Parallel)
    }
    #[cfg(not(feature = "parallel"))]
    {
        if threads.is_some_and(|n| n > 1) {
            log::warn!("built without the parallel feature; --threads ignored");
        }
        Ok(Exec::Sequential)
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(k) = cli.seed_override {
        cfg.override_seeds(k);
    }
    cfg.validate()
        .map_err(|e| ValidationError(format!("invalid configuration: {e}")))?;
    let out = cli
        .out
        .or_else(|| cfg.out_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let exec = setup_exec(cli.threads)?;
    let ctx = Ctx {
        cfg,
        out,
        seed_override: cli.seed_override,
        exec,
    };
    match cli.command {
        Command::GenData => stages::gen_data(&ctx),
        Command::Train { data } => stages::train_stage(&ctx, data),
        Command::Mine { model, data, round } => stages::mine_stage(&ctx, model, data, round),
        Command::Retrain {
            model,
            base,
            mined,
            test,
            alphas,
        } => stages::retrain_stage(
            &ctx,
            RetrainArgs {
                model,
                base,
                mined,
                test,
                alphas,
            },
        ),
        Command::Eval {
            model,
            data,
            trim,
            report,
        } => {
            let r = stages::eval_stage(&ctx, model, data, trim, report)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(())
        }
        Command::Loop => stages::loop_stage(&ctx),
    }
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<ValidationError>()
            || e.downcast_ref::<errmine::Error>()
                .is_some_and(errmine::Error::is_validation)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
