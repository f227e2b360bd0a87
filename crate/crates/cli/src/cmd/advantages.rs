use std::path::Path;
use std::process::ExitCode;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use toolkd_core::grpo::{is_homogeneous, standardize_advantages};

use crate::io::{finish, open_output, parse_line, read_lines, write_json_line, CliError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupRecord {
    #[serde(default)]
    group_id: Option<Value>,
    rewards: Vec<f64>,
}

#[derive(Serialize)]
struct AdvantageLine<'a> {
    group_id: &'a Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    advantages: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    filtered: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn run(input: &Path, output: Option<&Path>) -> Result<ExitCode, CliError> {
    let lines = read_lines(input)?;
    let mut records = Vec::with_capacity(lines.len());
    for (lineno, line) in &lines {
        records.push(parse_line::<GroupRecord>(input, *lineno, line)?);
    }
    let mut out = open_output(output)?;
    let mut failures = 0usize;
    for (index, record) in records.iter().enumerate() {
        let group_id = record.group_id.clone().unwrap_or_else(|| Value::from(index));
        let mut line = AdvantageLine { group_id: &group_id, advantages: None, filtered: false, error: None };
        if record.rewards.iter().any(|r| !r.is_finite()) {
            line.error = Some("rewards must be finite".into());
        } else if record.rewards.len() >= 2 && is_homogeneous(&record.rewards) {
            line.filtered = true;
        } else {
            match standardize_advantages(&record.rewards) {
                Ok(a) => line.advantages = Some(a),
                Err(e) => line.error = Some(e.to_string()),
            }
        }
        if let Some(err) = &line.error {
            failures += 1;
            eprintln!("group {group_id}: {err}");
        }
        write_json_line(&mut out, &line)?;
    }
    finish(out)?;
    Ok(if failures > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}
