use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use toolkd_core::{total_reward, RewardBreakdown, ToolSchema};

use crate::io::{finish, io_error, open_output, parse_line, read_lines, write_json_line, CliError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRecord {
    id: String,
    generation: String,
    ground_truth: String,
    /// Inline schema (array or single function object) or a path relative to
    /// the input file.
    #[serde(default)]
    schema: Option<Value>,
}

#[derive(Serialize)]
struct ScoredLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    breakdown: &'a RewardBreakdown,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    id: &'a str,
    error: String,
}

struct SchemaCache {
    base: PathBuf,
    files: HashMap<PathBuf, ToolSchema>,
}

impl SchemaCache {
    fn load(&mut self, path: &Path) -> Result<&ToolSchema, CliError> {
        let full = if path.is_absolute() { path.to_path_buf() } else { self.base.join(path) };
        if !self.files.contains_key(&full) {
            let text = fs::read_to_string(&full).map_err(|e| io_error(&full, e))?;
            let schema = ToolSchema::from_json_str(&text).map_err(|e| io_error(&full, e))?;
            self.files.insert(full.clone(), schema);
        }
        Ok(&self.files[&full])
    }
}

pub fn run(input: &Path, default_schema: Option<&Path>, output: Option<&Path>) -> Result<ExitCode, CliError> {
    let lines = read_lines(input)?;
    let mut records = Vec::with_capacity(lines.len());
    let mut seen = HashSet::new();
    for (lineno, line) in &lines {
        let record: ScoreRecord = parse_line(input, *lineno, line)?;
        if !seen.insert(record.id.clone()) {
            return Err(CliError::Validation(format!("{}:{lineno}: duplicate id `{}`", input.display(), record.id)));
        }
        records.push(record);
    }

    let mut cache = SchemaCache {
        base: input.parent().map(Path::to_path_buf).unwrap_or_default(),
        files: HashMap::new(),
    };
    let default = match default_schema {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            Some(ToolSchema::from_json_str(&text).map_err(|e| io_error(p, e))?)
        }
        None => None,
    };

    let mut out = open_output(output)?;
    let mut failures = 0usize;
    let mut total = 0.0;
    let mut scored = 0usize;
    for record in &records {
        let inline;
        let schema = match &record.schema {
            Some(Value::String(path)) => cache.load(Path::new(path))?,
            Some(value) => {
                inline = ToolSchema::from_value(value.clone())
                    .map_err(|e| CliError::Format(format!("record `{}`: invalid schema: {e}", record.id)))?;
                &inline
            }
            None => default.as_ref().ok_or_else(|| {
                CliError::Format(format!("record `{}` has no schema and --schema was not given", record.id))
            })?,
        };
        match total_reward(&record.generation, &record.ground_truth, schema) {
            Ok(breakdown) => {
                total += breakdown.total;
                scored += 1;
                write_json_line(&mut out, &ScoredLine { id: &record.id, breakdown: &breakdown })?;
            }
            Err(err) => {
                failures += 1;
                eprintln!("record `{}`: {err}", record.id);
                write_json_line(&mut out, &ErrorLine { id: &record.id, error: err.to_string() })?;
            }
        }
    }
    finish(out)?;

    if scored > 0 {
        eprintln!("scored {scored} records, mean total reward {}", total / scored as f64);
    } else {
        eprintln!("scored 0 records");
    }
    if failures > 0 {
        eprintln!("{failures} records have malformed ground truth");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}
