//! Composite similarity reward for function-calling generations.
//!
//! A generation that breaks any format rule scores -1. Otherwise it scores
//! the IoU-style tool-call reward when the ground truth contains calls, or the
//! ROUGE-L response reward when the ground truth is plain text. The total is
//! therefore always in [-1, 1].

use serde::Serialize;
use thiserror::Error;

use crate::chat_format::{
    parse_generation, validate_format, FormatViolation, ToolCall, ToolSchema, ViolationKind,
};
use crate::similarity::{call_similarity_with, rouge_l_f1, SimilarityConfig};

#[derive(Debug, Error)]
pub enum RewardError {
    /// The label itself is broken; this is a dataset problem, not a model
    /// failure.
    #[error("malformed ground truth: {}", join_violations(.violations))]
    MalformedGroundTruth { violations: Vec<FormatViolation> },
}

fn join_violations(violations: &[FormatViolation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CallMatch {
    pub pred_index: usize,
    pub gt_index: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutcome {
    pub matches: Vec<CallMatch>,
    pub total_similarity: f64,
}

/// Pairs predicted calls with ground-truth calls. Implementations must
/// return a partial injection and only pair calls with equal names.
pub trait CallMatcher {
    fn match_calls(&self, pred: &[ToolCall], gt: &[ToolCall], cfg: &SimilarityConfig) -> MatchOutcome;
}

/// Predictions claim, in source order, the most similar unclaimed
/// ground-truth call with the same name. Ties go to the lowest ground-truth
/// index.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyMatcher;

impl CallMatcher for GreedyMatcher {
    fn match_calls(&self, pred: &[ToolCall], gt: &[ToolCall], cfg: &SimilarityConfig) -> MatchOutcome {
        let mut available = vec![true; gt.len()];
        let mut outcome = MatchOutcome::default();
        for (pi, p) in pred.iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gt.iter().enumerate() {
                if !available[gi] || g.name != p.name {
                    continue;
                }
                let s = call_similarity_with(p, g, cfg);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((gi, s));
                }
            }
            if let Some((gi, s)) = best {
                available[gi] = false;
                outcome.total_similarity += s;
                outcome.matches.push(CallMatch { pred_index: pi, gt_index: gi, similarity: s });
            }
        }
        outcome
    }
}

pub fn greedy_match(pred: &[ToolCall], gt: &[ToolCall]) -> MatchOutcome {
    GreedyMatcher.match_calls(pred, gt, &SimilarityConfig::default())
}

/// Matched similarity mass over `|P| + |G| - matched`.
pub fn iou_reward(outcome: &MatchOutcome, n_pred: usize, n_gt: usize) -> f64 {
    let union = n_pred + n_gt - outcome.matches.len();
    if union == 0 {
        1.0
    } else {
        outcome.total_similarity / union as f64
    }
}

pub fn tool_call_reward(pred: &[ToolCall], gt: &[ToolCall]) -> f64 {
    iou_reward(&greedy_match(pred, gt), pred.len(), gt.len())
}

pub fn response_reward(pred_text: &str, gt_text: &str) -> f64 {
    rouge_l_f1(pred_text, gt_text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub r_format: u8,
    pub r_fc: f64,
    pub r_response: f64,
    pub total: f64,
    pub matches: Vec<CallMatch>,
    pub violations: Vec<FormatViolation>,
}

/// Reward computation with a pluggable call matcher.
#[derive(Debug, Clone, Default)]
pub struct RewardScorer<M = GreedyMatcher> {
    pub matcher: M,
    pub similarity: SimilarityConfig,
}

impl<M: CallMatcher> RewardScorer<M> {
    pub fn new(matcher: M, similarity: SimilarityConfig) -> Self {
        RewardScorer { matcher, similarity }
    }

    pub fn total_reward(
        &self,
        raw_generation: &str,
        ground_truth: &str,
        schema: &ToolSchema,
    ) -> Result<RewardBreakdown, RewardError> {
        let truth = parse_ground_truth(ground_truth, schema)?;
        let pred = parse_generation(raw_generation);
        let check = validate_format(&pred, schema);
        if !check.is_valid() {
            return Ok(RewardBreakdown {
                r_format: 0,
                r_fc: 0.0,
                r_response: 0.0,
                total: -1.0,
                matches: Vec::new(),
                violations: check.violations,
            });
        }
        let (r_fc, r_response, matches) = if truth.tool_calls.is_empty() {
            (0.0, response_reward(&pred.response_text, &truth.response_text), Vec::new())
        } else {
            let outcome = self.matcher.match_calls(&pred.tool_calls, &truth.tool_calls, &self.similarity);
            let r = iou_reward(&outcome, pred.tool_calls.len(), truth.tool_calls.len());
            (r, 0.0, outcome.matches)
        };
        Ok(RewardBreakdown {
            r_format: 1,
            r_fc,
            r_response,
            total: r_fc + r_response,
            matches,
            violations: Vec::new(),
        })
    }
}

/// Scores one generation against its label with the greedy matcher and exact
/// numeric comparison.
pub fn total_reward(
    raw_generation: &str,
    ground_truth: &str,
    schema: &ToolSchema,
) -> Result<RewardBreakdown, RewardError> {
    RewardScorer::<GreedyMatcher>::default().total_reward(raw_generation, ground_truth, schema)
}

/// Strict pass/fail reward: 1 when the generation is format-valid and its
/// calls (or, for text labels, its trimmed response) equal the label
/// exactly, else -1.
pub fn exact_match_reward(
    raw_generation: &str,
    ground_truth: &str,
    schema: &ToolSchema,
) -> Result<f64, RewardError> {
    let truth = parse_ground_truth(ground_truth, schema)?;
    let pred = parse_generation(raw_generation);
    if !validate_format(&pred, schema).is_valid() {
        return Ok(-1.0);
    }
    let hit = if truth.tool_calls.is_empty() {
        pred.tool_calls.is_empty() && pred.response_text == truth.response_text
    } else {
        pred.tool_calls == truth.tool_calls
    };
    Ok(if hit { 1.0 } else { -1.0 })
}

/// Labels are held to every format rule except the think requirement: a
/// ground truth may omit its reasoning block.
pub fn parse_ground_truth(
    ground_truth: &str,
    schema: &ToolSchema,
) -> Result<crate::chat_format::ParsedGeneration, RewardError> {
    let parsed = parse_generation(ground_truth);
    let violations: Vec<FormatViolation> = validate_format(&parsed, schema)
        .violations
        .into_iter()
        .filter(|v| v.kind != ViolationKind::MissingThink)
        .collect();
    if violations.is_empty() {
        Ok(parsed)
    } else {
        Err(RewardError::MalformedGroundTruth { violations })
    }
}
