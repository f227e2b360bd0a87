//! ROUGE-L and the argument-level similarity used to compare tool calls.

use std::collections::HashSet;

use indexmap::IndexMap;

use crate::chat_format::ToolCall;
use crate::value::{numbers_equal, TypedValue};

/// Lowercased, whitespace-separated tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    pub fn tokenize(text: &str) -> Self {
        TokenSequence { tokens: text.to_lowercase().split_whitespace().map(str::to_string).collect() }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSequence {
    /// Builds a sequence from pre-split tokens; each is lowercased and split
    /// again so the whitespace invariant holds.
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let tokens = iter
            .into_iter()
            .flat_map(|s| {
                let s: String = s.into();
                s.to_lowercase().split_whitespace().map(str::to_string).collect::<Vec<_>>()
            })
            .collect();
        TokenSequence { tokens }
    }
}

/// Length of the longest common subsequence, two-row dynamic program.
pub fn lcs_length(a: &TokenSequence, b: &TokenSequence) -> usize {
    let (a, b) = (a.tokens(), b.tokens());
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over lowercased whitespace tokens. Two empty strings score 1.
pub fn rouge_l_f1(pred: &str, reference: &str) -> f64 {
    let p = TokenSequence::tokenize(pred);
    let r = TokenSequence::tokenize(reference);
    match (p.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let l = lcs_length(&p, &r);
    if l == 0 {
        return 0.0;
    }
    let precision = l as f64 / p.len() as f64;
    let recall = l as f64 / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityConfig {
    /// Absolute tolerance for numeric argument equality. Zero means exact.
    pub numeric_tolerance: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig { numeric_tolerance: 0.0 }
    }
}

pub fn value_similarity(p: &TypedValue, g: &TypedValue) -> f64 {
    value_similarity_with(p, g, &SimilarityConfig::default())
}

/// Per-argument score: ROUGE-L for two strings, exact match for two numbers
/// or two booleans, exact match of canonical renderings otherwise.
pub fn value_similarity_with(p: &TypedValue, g: &TypedValue, cfg: &SimilarityConfig) -> f64 {
    let hit = match (p, g) {
        (TypedValue::String(a), TypedValue::String(b)) => return rouge_l_f1(a, b),
        (TypedValue::Number(a), TypedValue::Number(b)) => {
            if cfg.numeric_tolerance > 0.0 {
                match (a.as_f64(), b.as_f64()) {
                    (Some(x), Some(y)) => (x - y).abs() <= cfg.numeric_tolerance,
                    _ => false,
                }
            } else {
                numbers_equal(a, b)
            }
        }
        (TypedValue::Bool(a), TypedValue::Bool(b)) => a == b,
        _ => p.canonical_string() == g.canonical_string(),
    };
    if hit {
        1.0
    } else {
        0.0
    }
}

pub fn argument_similarity(
    p: &IndexMap<String, TypedValue>,
    g: &IndexMap<String, TypedValue>,
    cfg: &SimilarityConfig,
) -> f64 {
    let union: HashSet<&str> = p.keys().chain(g.keys()).map(String::as_str).collect();
    if union.is_empty() {
        return 1.0;
    }
    let matched = p
        .iter()
        .filter_map(|(k, pv)| g.get(k).map(|gv| value_similarity_with(pv, gv, cfg)))
        .fold(0.0, |acc, s| acc + s);
    matched / union.len() as f64
}

/// Argument-level similarity of two calls. Names are not compared here.
pub fn call_similarity(p: &ToolCall, g: &ToolCall) -> f64 {
    argument_similarity(&p.arguments, &g.arguments, &SimilarityConfig::default())
}

pub fn call_similarity_with(p: &ToolCall, g: &ToolCall, cfg: &SimilarityConfig) -> f64 {
    argument_similarity(&p.arguments, &g.arguments, cfg)
}
