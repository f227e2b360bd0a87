//! `toolkd`: batch scoring, distillation-loss evaluation, gradient checks,
//! advantage computation and the toy trainer.
//!
//! Exit status: 0 on success, 1 when records or checks fail validation, 2 on
//! I/O or input-format errors.

mod cmd;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use toolkd_core::divergence::{LossKind, DEFAULT_LAMBDA_TAIL};

#[derive(Debug, Parser)]
#[command(name = "toolkd", version, about = "Similarity rewards, distillation losses and GRPO utilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score generations against ground truths (JSONL in, JSONL out).
    Score {
        #[arg(long)]
        input: PathBuf,
        /// Schema used by records that do not carry their own.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Defaults to standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a distillation loss per position of a logit file.
    Kd {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_loss)]
        loss: LossKind,
        /// Truncate every teacher slice to its `k` largest entries.
        #[arg(long)]
        k: Option<usize>,
        /// Student top-m size for the tail penalty; defaults to min(100, vocab).
        #[arg(long)]
        m: Option<usize>,
        #[arg(long = "lambda", default_value_t = DEFAULT_LAMBDA_TAIL)]
        lambda_tail: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Vocabulary size of the random instances.
        #[arg(long, default_value_t = 32)]
        dims: usize,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 16)]
        m: usize,
        #[arg(long = "lambda", default_value_t = DEFAULT_LAMBDA_TAIL)]
        lambda_tail: f64,
    },
    /// Train the tabular toy policy with GRPO and write the log as CSV.
    TrainToy {
        #[arg(long)]
        task: PathBuf,
        /// JSON training config; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Standardize rewards within each group (JSONL in, JSONL out).
    Advantages {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    match s.parse::<LossKind>() {
        Ok(LossKind::TailPenalty) | Err(_) => Err(format!("unknown loss `{s}`; expected fkl, rkl, rkl-stab or ckd")),
        Ok(kind) => Ok(kind),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score { input, schema, output } => cmd::score::run(&input, schema.as_deref(), output.as_deref()),
        Command::Kd { input, loss, k, m, lambda_tail, output } => {
            cmd::kd::run(&input, cmd::kd::Options { loss, k, m, lambda_tail }, output.as_deref())
        }
        Command::Gradcheck { seed, trials, dims, k, m, lambda_tail } => cmd::gradcheck::run(seed, trials, dims, k, m, lambda_tail),
        Command::TrainToy { task, config, seed, iterations, epsilon, beta, output } => cmd::train::run(
            &task,
            config.as_deref(),
            cmd::train::Overrides { seed, iterations, epsilon, beta },
            output.as_deref(),
        ),
        Command::Advantages { input, output } => cmd::advantages::run(&input, output.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
