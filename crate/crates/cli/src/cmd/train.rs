use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use toolkd_core::toy_trainer::{train_sim_rl, ToyError, ToyTask, TrainConfig};

use crate::io::{finish, io_error, open_output, CliError};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub struct Overrides {
    pub seed: u64,
    pub iterations: usize,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
}

fn toy_error(path: &Path, err: ToyError) -> CliError {
    match err {
        ToyError::Io(_) | ToyError::Json(_) => io_error(path, err),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}

pub fn run(task_path: &Path, config: Option<&Path>, ov: Overrides, output: Option<&Path>) -> Result<ExitCode, CliError> {
    let task = ToyTask::load(task_path).map_err(|e| toy_error(task_path, e))?;
    let mut cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            serde_json::from_str::<TrainConfig>(&text).map_err(|e| io_error(p, e))?
        }
        None => TrainConfig::default(),
    };
    if let Some(e) = ov.epsilon {
        cfg.grpo.epsilon = e;
    }
    if let Some(b) = ov.beta {
        cfg.grpo.beta = b;
    }
    cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let log = train_sim_rl(&task, &cfg, ov.iterations, ov.seed).map_err(|e| CliError::Validation(e.to_string()))?;

    let mut out = open_output(output)?;
    let write_err = |e: std::io::Error| CliError::Format(format!("write failed: {e}"));
    writeln!(out, "# toolkd train-log version {LOG_VERSION}").map_err(write_err)?;
    {
        let mut writer = csv::Writer::from_writer(&mut out);
        for stats in &log.iterations {
            writer.serialize(stats).map_err(|e| CliError::Format(format!("write failed: {e}")))?;
        }
        if log.iterations.is_empty() {
            writer
                .write_record(["iteration", "mean_reward", "mean_entropy", "filtered_fraction"])
                .map_err(|e| CliError::Format(format!("write failed: {e}")))?;
        }
        writer.flush().map_err(write_err)?;
    }
    finish(out)?;
    if log.iterations.is_empty() {
        eprintln!("no iterations run");
    } else {
        eprintln!("final trailing-50 mean reward {}", log.trailing_mean_reward(50));
    }
    Ok(ExitCode::SUCCESS)
}
