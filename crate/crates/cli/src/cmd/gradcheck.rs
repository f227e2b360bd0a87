use std::process::ExitCode;

use toolkd_core::gradcheck::{run as run_suite, GradcheckConfig};

use crate::io::CliError;

pub fn run(seed: u64, trials: usize, dims: usize, k: usize, m: usize, lambda_tail: f64) -> Result<ExitCode, CliError> {
    if k == 0 || k > dims || m == 0 || m > dims {
        return Err(CliError::Validation(format!("need 1 <= k, m <= dims (k={k}, m={m}, dims={dims})")));
    }
    let cfg = GradcheckConfig { vocab: dims, k, m, lambda_tail, trials, seed, ..GradcheckConfig::default() };
    if trials == 0 {
        eprintln!("warning: --trials 0 checks nothing");
    }
    let summaries = run_suite(&cfg).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut all_passed = true;
    println!("{:<10} {:>8} {:>8} {:>14} {:>14}  status", "loss", "checked", "skipped", "max_rel_err", "max_|sum grad|");
    for s in &summaries {
        let passed = s.passed(cfg.tolerance);
        all_passed &= passed;
        println!(
            "{:<10} {:>8} {:>8} {:>14.3e} {:>14.3e}  {}",
            s.kind.flag(),
            s.checked,
            s.skipped_near_boundary,
            s.max_rel_error,
            s.max_abs_grad_sum,
            if passed { "ok" } else { "FAIL" }
        );
    }
    let skipped: usize = summaries.iter().map(|s| s.skipped_near_boundary).sum();
    if skipped > 0 {
        println!("{skipped} checks skipped: student top-{m} boundary within {:e}", cfg.margin);
    }
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
