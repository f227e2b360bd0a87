//! Group-relative policy optimization: advantage standardization,
//! homogeneous-group filtering and the clipped surrogate with a k2 KL
//! penalty.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("group has {size} rollouts, need at least 2")]
    GroupTooSmall { size: usize },
    #[error("all rewards in the group are equal; the group should have been filtered")]
    ZeroVariance,
    #[error("{advantages} advantages for {rollouts} rollouts")]
    LengthMismatch { advantages: usize, rollouts: usize },
    #[error("rollout {rollout} has no tokens")]
    EmptyRollout { rollout: usize },
    #[error("rollout {rollout}, token {token}: log-probability {value} is not finite and <= 0")]
    InvalidLogProb { rollout: usize, token: usize, value: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub logp_new: f64,
    pub logp_old: f64,
    pub logp_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub tokens: Vec<TokenLogProbs>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }

    pub fn is_homogeneous(&self) -> bool {
        is_homogeneous(&self.rewards())
    }

    fn check_log_probs(&self) -> Result<(), GrpoError> {
        for (ri, rollout) in self.rollouts.iter().enumerate() {
            if rollout.tokens.is_empty() {
                return Err(GrpoError::EmptyRollout { rollout: ri });
            }
            for (ti, t) in rollout.tokens.iter().enumerate() {
                for value in [t.logp_new, t.logp_old, t.logp_ref] {
                    if !(value.is_finite() && value <= 0.0) {
                        return Err(GrpoError::InvalidLogProb { rollout: ri, token: ti, value });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    /// Clip range for the importance ratio.
    pub epsilon: f64,
    /// Weight of the k2 KL penalty against the reference policy.
    pub beta: f64,
    pub filter_homogeneous: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig { epsilon: 0.2, beta: 1e-3, filter_homogeneous: true }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.epsilon > 0.0) {
            return Err(GrpoError::InvalidConfig(format!("epsilon = {} must be > 0", self.epsilon)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(GrpoError::InvalidConfig(format!("beta = {} must be >= 0", self.beta)));
        }
        Ok(())
    }
}

/// True when every reward equals the first one (including groups of size
/// 0 or 1).
pub fn is_homogeneous(rewards: &[f64]) -> bool {
    rewards.iter().all(|&r| r == rewards[0])
}

/// `(R_i - mean) / std` with the population standard deviation.
pub fn standardize_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall { size: rewards.len() });
    }
    if is_homogeneous(rewards) {
        return Err(GrpoError::ZeroVariance);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Err(GrpoError::ZeroVariance);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Drops every group whose rewards are all equal; survivors keep their order
/// and contents.
pub fn filter_homogeneous(groups: Vec<RolloutGroup>) -> Vec<RolloutGroup> {
    groups.into_iter().filter(|g| !g.is_homogeneous()).collect()
}

/// k2 KL estimate `0.5 * (logp_new - logp_ref)^2`.
pub fn kl_k2(logp_new: f64, logp_ref: f64) -> f64 {
    0.5 * (logp_new - logp_ref).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TokenDiagnostics {
    pub ratio: f64,
    /// The clipped branch of the min was strictly smaller.
    pub clipped: bool,
    pub surrogate: f64,
    pub kl: f64,
    pub term: f64,
    /// Derivative of the whole objective with respect to this token's
    /// `logp_new`.
    pub d_value_d_logp_new: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoObjective {
    pub value: f64,
    pub per_token: Vec<Vec<TokenDiagnostics>>,
}

/// Clipped surrogate minus the KL penalty, averaged over tokens within each
/// rollout and then over rollouts.
pub fn grpo_objective(
    group: &RolloutGroup,
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<GrpoObjective, GrpoError> {
    cfg.validate()?;
    if advantages.len() != group.rollouts.len() {
        return Err(GrpoError::LengthMismatch {
            advantages: advantages.len(),
            rollouts: group.rollouts.len(),
        });
    }
    group.check_log_probs()?;
    let g = group.rollouts.len() as f64;
    let mut value = 0.0;
    let mut per_token = Vec::with_capacity(group.rollouts.len());
    for (rollout, &adv) in group.rollouts.iter().zip(advantages) {
        let len = rollout.tokens.len() as f64;
        let weight = 1.0 / (g * len);
        let mut diags = Vec::with_capacity(rollout.tokens.len());
        let mut sum = 0.0;
        for t in &rollout.tokens {
            let ratio = (t.logp_new - t.logp_old).exp();
            let unclipped = ratio * adv;
            let clipped_val = ratio.clamp(1.0 - cfg.epsilon, 1.0 + cfg.epsilon) * adv;
            let clipped = clipped_val < unclipped;
            let surrogate = if clipped { clipped_val } else { unclipped };
            let kl = kl_k2(t.logp_new, t.logp_ref);
            let term = surrogate - cfg.beta * kl;
            let d_surrogate = if clipped { 0.0 } else { unclipped };
            let d_term = d_surrogate - cfg.beta * (t.logp_new - t.logp_ref);
            sum += term;
            diags.push(TokenDiagnostics {
                ratio,
                clipped,
                surrogate,
                kl,
                term,
                d_value_d_logp_new: weight * d_term,
            });
        }
        value += sum / len;
        per_token.push(diags);
    }
    Ok(GrpoObjective { value: value / g, per_token })
}
