use std::path::Path;
use std::process::ExitCode;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use toolkd_core::divergence::{evaluate, DivergenceError, LossKind, LossReport, StudentLogits, TailParams, TopKDistribution};

use crate::io::{finish, open_output, parse_line, read_lines, write_json_line, CliError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub loss: LossKind,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub lambda_tail: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    vocab_size: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TeacherSlice {
    indices: Vec<usize>,
    probs: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KdRecord {
    position_id: Value,
    teacher_topk: TeacherSlice,
    student_logits: Vec<f64>,
}

#[derive(Serialize)]
struct PositionLine<'a> {
    position_id: &'a Value,
    loss: f64,
    escape_mass: f64,
    entropy: f64,
    fkl_part: f64,
    tail_part: f64,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    position_id: &'a Value,
    error: String,
}

#[derive(Serialize)]
struct Footer {
    positions: usize,
    failed: usize,
    mean_loss: Option<f64>,
    mean_escape_mass: Option<f64>,
    mean_entropy: Option<f64>,
}

fn evaluate_record(record: &KdRecord, vocab: usize, opts: &Options, params: TailParams) -> Result<LossReport, DivergenceError> {
    if record.student_logits.len() != vocab {
        return Err(DivergenceError::InvalidParameter(format!(
            "{} student logits for declared vocabulary size {vocab}",
            record.student_logits.len()
        )));
    }
    let mut teacher = TopKDistribution::from_parts(&record.teacher_topk.indices, &record.teacher_topk.probs)?;
    if let Some(k) = opts.k {
        teacher = teacher.truncate(k)?;
    }
    let student = StudentLogits::new(record.student_logits.clone())?;
    evaluate(opts.loss, &teacher, &student, params)
}

pub fn run(input: &Path, opts: Options, output: Option<&Path>) -> Result<ExitCode, CliError> {
    let lines = read_lines(input)?;
    let Some(((header_line, header_text), body)) = lines.split_first() else {
        return Err(CliError::Format(format!("{}: missing header line", input.display())));
    };
    let header: Header = parse_line(input, *header_line, header_text)?;
    if header.version != FORMAT_VERSION {
        return Err(CliError::Format(format!("{}: unsupported version {}", input.display(), header.version)));
    }
    if header.vocab_size == 0 {
        return Err(CliError::Validation("vocab_size must be positive".into()));
    }
    let params = TailParams {
        m: opts.m.unwrap_or_else(|| TailParams::for_vocab(header.vocab_size).m),
        lambda_tail: opts.lambda_tail,
    };
    let mut records = Vec::with_capacity(body.len());
    for (lineno, line) in body {
        records.push(parse_line::<KdRecord>(input, *lineno, line)?);
    }

    let mut out = open_output(output)?;
    write_json_line(&mut out, &header)?;
    let (mut loss, mut escape, mut ent, mut ok, mut failed) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for record in &records {
        match evaluate_record(record, header.vocab_size, &opts, params) {
            Ok(report) => {
                loss += report.loss;
                escape += report.aux.escape_mass;
                ent += report.aux.entropy;
                ok += 1;
                write_json_line(
                    &mut out,
                    &PositionLine {
                        position_id: &record.position_id,
                        loss: report.loss,
                        escape_mass: report.aux.escape_mass,
                        entropy: report.aux.entropy,
                        fkl_part: report.aux.fkl_part,
                        tail_part: report.aux.tail_part,
                    },
                )?;
            }
            Err(err) => {
                failed += 1;
                eprintln!("position {}: {err}", record.position_id);
                write_json_line(&mut out, &ErrorLine { position_id: &record.position_id, error: err.to_string() })?;
            }
        }
    }
    let mean = |sum: f64| (ok > 0).then(|| sum / ok as f64);
    write_json_line(
        &mut out,
        &Footer {
            positions: ok,
            failed,
            mean_loss: mean(loss),
            mean_escape_mass: mean(escape),
            mean_entropy: mean(ent),
        },
    )?;
    finish(out)?;
    Ok(if failed > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}
