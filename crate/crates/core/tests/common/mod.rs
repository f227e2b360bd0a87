#![allow(dead_code)]

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::Rng;
use toolkd_core::chat_format::{render_generation, FunctionDef, ParamSpec};
use toolkd_core::{ToolCall, ToolSchema, TypedValue};

pub const WORDS: &[&str] = &[
    "paris", "Tokyo", "weather", "the", "a4", "A4", "Mozilla/5.0", "sfo", "KSFO", "runway", "blue", "label", "x",
];

pub const FUNCTION_NAMES: &[&str] = &["get_weather", "check_wordpress", "search", "convert", "lookup"];
pub const PARAM_NAMES: &[&str] = &["city", "url", "unit", "query", "amount", "flag"];

pub fn random_text<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let n = rng.random_range(0..=max_words);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_value<R: Rng>(rng: &mut R) -> TypedValue {
    match rng.random_range(0..6) {
        0 | 1 | 2 => TypedValue::from(random_text(rng, 3)),
        3 => TypedValue::from(rng.random_range(-3i64..4)),
        4 => TypedValue::from(rng.random_bool(0.5)),
        _ => TypedValue::from(rng.random_range(0..4) as f64 * 0.5),
    }
}

pub fn random_schema<R: Rng>(rng: &mut R) -> ToolSchema {
    let n = rng.random_range(1..=4);
    let mut names: Vec<&str> = FUNCTION_NAMES.to_vec();
    let mut functions = Vec::new();
    for _ in 0..n {
        let name = names.remove(rng.random_range(0..names.len()));
        let mut params = IndexMap::new();
        for p in PARAM_NAMES {
            if !rng.random_bool(0.5) {
                continue;
            }
            let default = rng.random_bool(0.3).then(|| random_value(rng));
            params.insert(p.to_string(), ParamSpec { description: String::new(), type_tag: "any".into(), default });
        }
        functions.push(FunctionDef { name: name.into(), description: String::new(), parameters: params });
    }
    ToolSchema::new(functions).unwrap()
}

/// A call that respects rules 4 and 5 of `schema`.
pub fn random_valid_call<R: Rng>(rng: &mut R, schema: &ToolSchema) -> ToolCall {
    let f = schema.functions().choose(rng).unwrap();
    let mut call = ToolCall::new(f.name.clone());
    for p in f.parameters.keys() {
        if rng.random_bool(0.7) {
            call = call.arg(p.clone(), random_value(rng));
        }
    }
    call
}

pub struct Labelled {
    pub calls: Vec<ToolCall>,
    pub text: String,
}

/// Either one to three valid calls or a non-empty text answer.
pub fn random_label<R: Rng>(rng: &mut R, schema: &ToolSchema) -> Labelled {
    if rng.random_bool(0.7) {
        let n = rng.random_range(1..=3);
        Labelled { calls: (0..n).map(|_| random_valid_call(rng, schema)).collect(), text: String::new() }
    } else {
        let mut text = random_text(rng, 6);
        if text.is_empty() {
            text = "answer".into();
        }
        Labelled { calls: Vec::new(), text }
    }
}

/// A format-valid generation: think block, zero to three valid calls and
/// optional text.
pub fn random_valid_generation<R: Rng>(rng: &mut R, schema: &ToolSchema) -> String {
    let think = random_text(rng, 5);
    let n = rng.random_range(0..=3);
    let calls: Vec<ToolCall> = (0..n).map(|_| random_valid_call(rng, schema)).collect();
    let text = if rng.random_bool(0.4) { random_text(rng, 5) } else { String::new() };
    render_generation(Some(&think), &calls, &text)
}

/// Mutations that break a format rule by construction.
pub fn random_invalid_generation<R: Rng>(rng: &mut R, schema: &ToolSchema) -> String {
    let call = random_valid_call(rng, schema);
    let think = random_text(rng, 4);
    match rng.random_range(0..8) {
        0 => render_generation(None, &[call], ""),
        1 => format!("<think>{think}</think><think>again</think>"),
        2 => format!("<think>{think}"),
        3 => format!("<think>{think}</think>\n<tool_call>\n{}", call.to_json()),
        4 => format!("<think>{think}</think>\n<tool_call>\n{{\"name\": \"{}\", \"arguments\": {{\n</tool_call>", call.name),
        5 => format!("<think>{think}</think>\n<tool_call>\n{{\"name\": \"not_declared\", \"arguments\": {{}}}}\n</tool_call>"),
        6 => {
            let bad = call.arg("zz_undeclared", 1i64);
            render_generation(Some(&think), &[bad], "")
        }
        _ => format!("<think>{think}</think>\n<tool_call>\n[1, 2]\n</tool_call>"),
    }
}

/// Random bytes drawn from a template-heavy alphabet.
pub fn random_noise<R: Rng>(rng: &mut R) -> String {
    const PIECES: &[&str] = &[
        "<think>", "</think>", "<tool_call>", "</tool_call>", "{", "}", "\"name\"", ":", "\"arguments\"", ",", " ",
        "\n", "get_weather", "\"", "text", "[", "]", "é",
    ];
    let n = rng.random_range(0..30);
    (0..n).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

pub fn render_label(label: &Labelled) -> String {
    if label.calls.is_empty() {
        label.text.clone()
    } else {
        render_generation(None, &label.calls, "")
    }
}

/// Plain recursive LCS, exponential but fine for short sequences.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    match (a.split_first(), b.split_first()) {
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                1 + brute_lcs(ra, rb)
            } else {
                brute_lcs(ra, b).max(brute_lcs(a, rb))
            }
        }
        _ => 0,
    }
}

pub fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase().split_whitespace().map(String::from).collect()
}

/// ROUGE-L F1 written directly from the definition.
pub fn oracle_rouge(pred: &str, reference: &str) -> f64 {
    let (p, r) = (tokens(pred), tokens(reference));
    if p.is_empty() && r.is_empty() {
        return 1.0;
    }
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let l = brute_lcs(&p, &r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (prec, rec) = (l / p.len() as f64, l / r.len() as f64);
    2.0 * prec * rec / (prec + rec)
}

pub fn oracle_value_similarity(p: &TypedValue, g: &TypedValue) -> f64 {
    match (p, g) {
        (TypedValue::String(a), TypedValue::String(b)) => oracle_rouge(a, b),
        (TypedValue::Number(a), TypedValue::Number(b)) => (a.as_f64() == b.as_f64()) as u8 as f64,
        _ => (p == g) as u8 as f64,
    }
}

pub fn oracle_call_similarity(p: &ToolCall, g: &ToolCall) -> f64 {
    let mut keys: Vec<&String> = p.arguments.keys().chain(g.arguments.keys()).collect();
    keys.sort();
    keys.dedup();
    if keys.is_empty() {
        return 1.0;
    }
    let mut total = 0.0;
    for k in &keys {
        if let (Some(a), Some(b)) = (p.arguments.get(*k), g.arguments.get(*k)) {
            total += oracle_value_similarity(a, b);
        }
    }
    total / keys.len() as f64
}
