use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Inputs were readable but failed a check.
    Validation(String),
    /// Unreadable files, unwritable outputs or malformed input formats.
    Format(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(1),
            CliError::Format(_) => ExitCode::from(2),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) | CliError::Format(msg) => f.write_str(msg),
        }
    }
}

pub fn io_error(path: &Path, err: impl fmt::Display) -> CliError {
    CliError::Format(format!("{}: {err}", path.display()))
}

/// Non-blank lines with their 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CliError> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    Ok(lines)
}

pub fn parse_line<T: serde::de::DeserializeOwned>(path: &Path, lineno: usize, line: &str) -> Result<T, CliError> {
    serde_json::from_str(line).map_err(|e| CliError::Format(format!("{}:{lineno}: {e}", path.display())))
}

pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_json_line<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string(value).map_err(|e| CliError::Format(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| CliError::Format(format!("write failed: {e}")))
}

pub fn finish(mut out: Box<dyn Write>) -> Result<(), CliError> {
    out.flush().map_err(|e| CliError::Format(format!("write failed: {e}")))
}
