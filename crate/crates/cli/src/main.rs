// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "ssgraph", version, about = "Train, backtest and check the dynamic stock-graph ranker")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training seed; for `synth`, the generator seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace the wavelet denoiser by the identity.
    #[arg(long, global = true)]
    no_wdn: bool,
    /// Use the last slice graph instead of the state-space recurrence.
    #[arg(long, global = true)]
    no_ssgl: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic panel with planted lead-lag pairs.
    Synth,
    /// Fit a model and write the checkpoint and per-epoch log.
    Train,
    /// Score the test split and run the Topk-Drop backtest.
    Backtest {
        /// Defaults to model.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use realized returns as scores (debugging upper bound).
        #[arg(long)]
        oracle_scores: bool,
        /// Print the metrics as a table.
        #[arg(long)]
        table: bool,
    },
    /// Metrics and backtest from a date,symbol,score,return CSV.
    EvalMetrics {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        table: bool,
    },
    /// Compare analytic and finite-difference gradients on a small fixture.
    GradCheck {
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

/// An error with an explicit machine-readable code.
#[derive(Debug)]
pub struct Coded {
    code: &'static str,
    message: String,
}

impl Coded {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Coded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

fn error_code(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(e) = cause.downcast_ref::<ssgraph::Error>() {
            return e.code();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "E_IO";
        }
        if cause.downcast_ref::<csv::Error>().is_some() {
            return "E_CSV";
        }
    }
    "E_INTERNAL"
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), std::env::vars())
        .map_err(|e| anyhow::Error::new(Coded::new("E_CONFIG", format!("{e:#}"))))?;
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Synth => cfg.synthetic.seed = seed,
            _ => cfg.train.seed = seed,
        }
    }
    if cli.no_wdn {
        cfg.model.use_wdn = false;
    }
    if cli.no_ssgl {
        cfg.model.use_ssgl = false;
    }
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Backtest {
            checkpoint,
            oracle_scores,
            table,
        } => {
            cfg.output.table |= table;
            commands::backtest(&cfg, checkpoint.as_deref(), oracle_scores)
        }
        Command::EvalMetrics { scores, table } => {
            cfg.output.table |= table;
            commands::eval_metrics(&cfg, &scores)
        }
        Command::GradCheck { epsilon, tolerance } => commands::grad_check(&cfg, epsilon, tolerance),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {message}", error_code(&e));
            ExitCode::FAILURE
        }
    }
}
