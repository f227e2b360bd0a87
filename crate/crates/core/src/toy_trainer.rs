//! Desk-scale demonstrations.
//!
//! [`train`] runs GRPO on a tabular categorical policy that emits one tool
//! call per prompt: a function choice followed by one value choice per
//! parameter (with an explicit "omit" action for parameters that have a
//! default). Every rollout is rendered to template text and scored by the real
//! reward pipeline, so the policy always produces format-valid text and the
//! reward only varies through the answer term.
//!
//! [`kd_fit`] descends free student logits against fixed teacher top-k slices
//! with one of the distillation losses and records escape mass and entropy.
//!
//! Randomness: every group draws from `ChaCha8Rng::seed_from_u64(seed)` with
//! stream `iteration * n_prompts + prompt_index`, so groups are independent
//! and could be sampled in any order.

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat_format::{render_generation, SchemaError, ToolCall, ToolSchema};
use crate::divergence::{
    entropy, evaluate, log_softmax, softmax, DivergenceError, LossKind, StudentLogits, TailParams,
    TopKDistribution,
};
use crate::grpo::{grpo_objective, is_homogeneous, standardize_advantages, GrpoConfig, GrpoError};
use crate::grpo::{Rollout, RolloutGroup, TokenLogProbs};
use crate::reward::{exact_match_reward, parse_ground_truth, total_reward, RewardError};
use crate::value::TypedValue;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("cannot read task file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid task JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("prompt `{prompt_id}`: {source}")]
    GroundTruth { prompt_id: String, source: RewardError },
    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPrompt {
    pub prompt_id: String,
    pub ground_truth: String,
}

/// Value domains per function and parameter.
pub type Domains = IndexMap<String, IndexMap<String, Vec<TypedValue>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaskFile {
    #[serde(default = "one")]
    version: u32,
    tools: ToolSchema,
    domains: Domains,
    prompts: Vec<ToyPrompt>,
}

fn one() -> u32 {
    1
}

/// A synthetic function-calling task: schema, finite value domains and
/// template-rendered ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    schema: ToolSchema,
    domains: Domains,
    prompts: Vec<ToyPrompt>,
}

impl ToyTask {
    pub fn new(schema: ToolSchema, domains: Domains, prompts: Vec<ToyPrompt>) -> Result<Self, ToyError> {
        let n = schema.functions().len();
        if !(2..=8).contains(&n) {
            return Err(ToyError::InvalidTask(format!("{n} functions, expected 2 to 8")));
        }
        for f in schema.functions() {
            let n_params = f.parameters.len();
            if !(1..=3).contains(&n_params) {
                return Err(ToyError::InvalidTask(format!(
                    "function `{}` has {n_params} parameters, expected 1 to 3",
                    f.name
                )));
            }
            let fd = domains
                .get(&f.name)
                .ok_or_else(|| ToyError::InvalidTask(format!("no domains for function `{}`", f.name)))?;
            for p in f.parameters.keys() {
                match fd.get(p) {
                    Some(values) if !values.is_empty() => {}
                    _ => {
                        return Err(ToyError::InvalidTask(format!(
                            "parameter `{}.{p}` needs a non-empty domain",
                            f.name
                        )))
                    }
                }
            }
        }
        if prompts.is_empty() {
            return Err(ToyError::InvalidTask("no prompts".into()));
        }
        let mut ids = HashSet::new();
        for p in &prompts {
            if !ids.insert(p.prompt_id.as_str()) {
                return Err(ToyError::InvalidTask(format!("duplicate prompt id `{}`", p.prompt_id)));
            }
            parse_ground_truth(&p.ground_truth, &schema)
                .map_err(|source| ToyError::GroundTruth { prompt_id: p.prompt_id.clone(), source })?;
        }
        Ok(ToyTask { schema, domains, prompts })
    }

    pub fn from_json_str(text: &str) -> Result<Self, ToyError> {
        let file: TaskFile = serde_json::from_str(text)?;
        if file.version != 1 {
            return Err(ToyError::InvalidTask(format!("unsupported task version {}", file.version)));
        }
        ToyTask::new(file.tools, file.domains, file.prompts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ToyError> {
        ToyTask::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let file = TaskFile {
            version: 1,
            tools: self.schema.clone(),
            domains: self.domains.clone(),
            prompts: self.prompts.clone(),
        };
        serde_json::to_string_pretty(&file).expect("task serialization is infallible")
    }

    pub fn schema(&self) -> &ToolSchema {
        &self.schema
    }

    pub fn prompts(&self) -> &[ToyPrompt] {
        &self.prompts
    }

    fn prompt_index(&self, prompt_id: &str) -> Result<usize, ToyError> {
        self.prompts
            .iter()
            .position(|p| p.prompt_id == prompt_id)
            .ok_or_else(|| ToyError::UnknownPrompt(prompt_id.to_string()))
    }

    fn domain(&self, function: usize, param: usize) -> &[TypedValue] {
        let f = &self.schema.functions()[function];
        let name = f.parameters.get_index(param).expect("parameter index").0;
        &self.domains[&f.name][name]
    }

    /// Number of actions of each parameter slot of `function`, including the
    /// omit action for optional parameters.
    fn slot_sizes(&self, function: usize) -> Vec<usize> {
        let f = &self.schema.functions()[function];
        f.parameters
            .values()
            .enumerate()
            .map(|(p, spec)| self.domain(function, p).len() + usize::from(spec.is_optional()))
            .collect()
    }
}

/// Which decision table a choice was made from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Function,
    Param { function: usize, param: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub decisions: Vec<(Slot, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
struct PromptTables {
    function: Vec<f64>,
    params: Vec<Vec<Vec<f64>>>,
}

impl PromptTables {
    fn zeros(task: &ToyTask) -> Self {
        let n = task.schema.functions().len();
        PromptTables {
            function: vec![0.0; n],
            params: (0..n).map(|f| task.slot_sizes(f).into_iter().map(|s| vec![0.0; s]).collect()).collect(),
        }
    }

    fn slot(&self, slot: Slot) -> &[f64] {
        match slot {
            Slot::Function => &self.function,
            Slot::Param { function, param } => &self.params[function][param],
        }
    }

    fn slot_mut(&mut self, slot: Slot) -> &mut [f64] {
        match slot {
            Slot::Function => &mut self.function,
            Slot::Param { function, param } => &mut self.params[function][param],
        }
    }

    fn for_each_slot_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        f(&mut self.function);
        for table in self.params.iter_mut().flatten() {
            f(table);
        }
    }
}

/// Tabular policy: independent logit tables per prompt and slot, plus a
/// frozen copy taken at construction that serves as the KL reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    tables: Vec<PromptTables>,
    reference: Vec<PromptTables>,
}

impl ToyPolicy {
    /// All-zero logits: uniform over every slot.
    pub fn uniform(task: &ToyTask) -> Self {
        let tables: Vec<PromptTables> = task.prompts.iter().map(|_| PromptTables::zeros(task)).collect();
        ToyPolicy { reference: tables.clone(), tables }
    }

    /// Policy that always takes the given trajectory for `prompt_index`, by
    /// placing `scale` on the chosen logits. The reference is reset to the
    /// result.
    pub fn with_preferred(mut self, prompt_index: usize, trajectory: &Trajectory, scale: f64) -> Self {
        for &(slot, action) in &trajectory.decisions {
            self.tables[prompt_index].slot_mut(slot)[action] += scale;
        }
        self.reference = self.tables.clone();
        self
    }

    pub fn slot_logits(&self, prompt_index: usize, slot: Slot) -> &[f64] {
        self.tables[prompt_index].slot(slot)
    }

    pub fn slot_logits_mut(&mut self, prompt_index: usize, slot: Slot) -> &mut [f64] {
        self.tables[prompt_index].slot_mut(slot)
    }

    /// Sum of the chosen-slot log-softmax values.
    pub fn log_prob(&self, prompt_index: usize, trajectory: &Trajectory) -> f64 {
        trajectory_log_prob(&self.tables[prompt_index], trajectory)
    }

    pub fn reference_log_prob(&self, prompt_index: usize, trajectory: &Trajectory) -> f64 {
        trajectory_log_prob(&self.reference[prompt_index], trajectory)
    }

    fn sample<R: Rng>(&self, task: &ToyTask, prompt_index: usize, rng: &mut R) -> Trajectory {
        let tables = &self.tables[prompt_index];
        let mut decisions = Vec::new();
        let function = sample_slot(&tables.function, rng);
        decisions.push((Slot::Function, function));
        for param in 0..task.slot_sizes(function).len() {
            let slot = Slot::Param { function, param };
            decisions.push((slot, sample_slot(tables.slot(slot), rng)));
        }
        Trajectory { decisions }
    }
}

fn trajectory_log_prob(tables: &PromptTables, trajectory: &Trajectory) -> f64 {
    trajectory.decisions.iter().map(|&(slot, a)| log_softmax(tables.slot(slot))[a]).sum()
}

fn sample_slot<R: Rng>(logits: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(softmax(logits)).expect("softmax weights are positive").sample(rng)
}

/// Renders a trajectory as template text: a think block and one tool call.
pub fn render_trajectory(task: &ToyTask, trajectory: &Trajectory) -> String {
    let (_, function) = trajectory.decisions[0];
    let def = &task.schema.functions()[function];
    let mut call = ToolCall::new(def.name.clone());
    for &(slot, action) in &trajectory.decisions[1..] {
        let Slot::Param { param, .. } = slot else { continue };
        let domain = task.domain(function, param);
        if let Some(value) = domain.get(action) {
            let name = def.parameters.get_index(param).expect("parameter index").0;
            call.arguments.insert(name.clone(), value.clone());
        }
    }
    let think = format!("The request maps to {}.", def.name);
    render_generation(Some(&think), &[call], "")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Continuous similarity reward.
    #[default]
    Similarity,
    /// 1 for an exact match, -1 otherwise.
    Binary,
}

fn score(task: &ToyTask, prompt_index: usize, text: &str, mode: RewardMode) -> f64 {
    let gt = &task.prompts[prompt_index].ground_truth;
    let result = match mode {
        RewardMode::Similarity => total_reward(text, gt, &task.schema).map(|r| r.total),
        RewardMode::Binary => exact_match_reward(text, gt, &task.schema),
    };
    result.expect("ground truths are validated when the task is built")
}

/// A sampled group together with the trajectories that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGroup {
    pub group: RolloutGroup,
    pub trajectories: Vec<Trajectory>,
    pub texts: Vec<String>,
}

fn sample_group<R: Rng>(
    policy: &ToyPolicy,
    task: &ToyTask,
    prompt_index: usize,
    group_size: usize,
    mode: RewardMode,
    rng: &mut R,
) -> SampledGroup {
    let mut rollouts = Vec::with_capacity(group_size);
    let mut trajectories = Vec::with_capacity(group_size);
    let mut texts = Vec::with_capacity(group_size);
    let tables = &policy.tables[prompt_index];
    let reference = &policy.reference[prompt_index];
    for _ in 0..group_size {
        let trajectory = policy.sample(task, prompt_index, rng);
        let text = render_trajectory(task, &trajectory);
        let tokens = trajectory
            .decisions
            .iter()
            .map(|&(slot, a)| {
                let logp = log_softmax(tables.slot(slot))[a];
                TokenLogProbs { logp_new: logp, logp_old: logp, logp_ref: log_softmax(reference.slot(slot))[a] }
            })
            .collect();
        rollouts.push(Rollout { tokens, reward: score(task, prompt_index, &text, mode) });
        trajectories.push(trajectory);
        texts.push(text);
    }
    SampledGroup {
        group: RolloutGroup { prompt_id: task.prompts[prompt_index].prompt_id.clone(), rollouts },
        trajectories,
        texts,
    }
}

/// Samples `group_size` rollouts for one prompt and scores them with the
/// similarity reward.
pub fn rollout(
    policy: &ToyPolicy,
    task: &ToyTask,
    prompt_id: &str,
    group_size: usize,
    rng_seed: u64,
) -> Result<SampledGroup, ToyError> {
    if group_size < 2 {
        return Err(ToyError::InvalidConfig(format!("group size {group_size} must be at least 2")));
    }
    let index = task.prompt_index(prompt_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(sample_group(policy, task, index, group_size, RewardMode::Similarity, &mut rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub group_size: usize,
    /// Plain gradient-ascent step on the logit tables.
    pub step_size: f64,
    pub grpo: GrpoConfig,
    pub reward: RewardMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { group_size: 8, step_size: 4.0, grpo: GrpoConfig::default(), reward: RewardMode::Similarity }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        if self.group_size < 2 {
            return Err(ToyError::InvalidConfig(format!("group_size = {} must be >= 2", self.group_size)));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(ToyError::InvalidConfig(format!("step_size = {} must be >= 0", self.step_size)));
        }
        self.grpo.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_entropy: f64,
    pub filtered_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub iterations: Vec<IterationStats>,
}

impl TrainLog {
    /// Mean reward over the last `n` iterations (all of them if fewer).
    pub fn trailing_mean_reward(&self, n: usize) -> f64 {
        let tail = &self.iterations[self.iterations.len().saturating_sub(n)..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().map(|s| s.mean_reward).sum::<f64>() / tail.len() as f64
    }
}

/// Gradient of the batch-mean GRPO objective with respect to every logit of
/// `policy`, given frozen sampled groups and their advantages.
pub fn objective_gradient(
    policy: &ToyPolicy,
    batch: &[(usize, SampledGroup, Vec<f64>)],
    grpo: &GrpoConfig,
) -> Result<(f64, ToyPolicy), ToyError> {
    let mut grad = policy.clone();
    for tables in &mut grad.tables {
        tables.for_each_slot_mut(|t| t.fill(0.0));
    }
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut value = 0.0;
    for (prompt_index, sampled, advantages) in batch {
        let group = with_current_log_probs(policy, *prompt_index, sampled);
        let obj = grpo_objective(&group, advantages, grpo)?;
        value += scale * obj.value;
        for (trajectory, diags) in sampled.trajectories.iter().zip(&obj.per_token) {
            for (&(slot, action), d) in trajectory.decisions.iter().zip(diags) {
                let probs = softmax(policy.slot_logits(*prompt_index, slot));
                let g = grad.slot_logits_mut(*prompt_index, slot);
                let w = scale * d.d_value_d_logp_new;
                for (a, (gi, p)) in g.iter_mut().zip(probs).enumerate() {
                    *gi += w * (f64::from(u8::from(a == action)) - p);
                }
            }
        }
    }
    Ok((value, grad))
}

/// Copy of the sampled group with `logp_new` recomputed under `policy`.
fn with_current_log_probs(policy: &ToyPolicy, prompt_index: usize, sampled: &SampledGroup) -> RolloutGroup {
    let mut group = sampled.group.clone();
    for (rollout, trajectory) in group.rollouts.iter_mut().zip(&sampled.trajectories) {
        for (token, &(slot, a)) in rollout.tokens.iter_mut().zip(&trajectory.decisions) {
            token.logp_new = log_softmax(policy.slot_logits(prompt_index, slot))[a];
        }
    }
    group
}

/// Batch-mean GRPO objective of `policy` on frozen groups.
pub fn batch_objective(
    policy: &ToyPolicy,
    batch: &[(usize, SampledGroup, Vec<f64>)],
    grpo: &GrpoConfig,
) -> Result<f64, ToyError> {
    let mut value = 0.0;
    for (prompt_index, sampled, advantages) in batch {
        let group = with_current_log_probs(policy, *prompt_index, sampled);
        value += grpo_objective(&group, advantages, grpo)?.value;
    }
    Ok(if batch.is_empty() { 0.0 } else { value / batch.len() as f64 })
}

/// GRPO on the toy policy. Each iteration samples one group per prompt,
/// drops homogeneous groups, standardizes advantages and takes one ascent
/// step. Returns the final policy and the log.
pub fn train(
    task: &ToyTask,
    cfg: &TrainConfig,
    iterations: usize,
    seed: u64,
) -> Result<(ToyPolicy, TrainLog), ToyError> {
    cfg.validate()?;
    let mut policy = ToyPolicy::uniform(task);
    let mut log = TrainLog::default();
    let n_prompts = task.prompts.len();
    for iteration in 0..iterations {
        let mut batch = Vec::with_capacity(n_prompts);
        let mut reward_sum = 0.0;
        let mut entropy_sum = 0.0;
        let mut decisions = 0usize;
        let mut filtered = 0usize;
        for prompt_index in 0..n_prompts {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((iteration * n_prompts + prompt_index) as u64);
            let sampled = sample_group(&policy, task, prompt_index, cfg.group_size, cfg.reward, &mut rng);
            for (rollout, trajectory) in sampled.group.rollouts.iter().zip(&sampled.trajectories) {
                reward_sum += rollout.reward;
                for &(slot, _) in &trajectory.decisions {
                    entropy_sum += entropy(&softmax(policy.slot_logits(prompt_index, slot)));
                    decisions += 1;
                }
            }
            let rewards = sampled.group.rewards();
            if is_homogeneous(&rewards) {
                filtered += 1;
                if cfg.grpo.filter_homogeneous {
                    continue;
                }
                let zeros = vec![0.0; rewards.len()];
                batch.push((prompt_index, sampled, zeros));
            } else {
                let advantages = standardize_advantages(&rewards)?;
                batch.push((prompt_index, sampled, advantages));
            }
        }
        log.iterations.push(IterationStats {
            iteration,
            mean_reward: reward_sum / (n_prompts * cfg.group_size) as f64,
            mean_entropy: entropy_sum / decisions as f64,
            filtered_fraction: filtered as f64 / n_prompts as f64,
        });
        if cfg.step_size > 0.0 && !batch.is_empty() {
            let (_, grad) = objective_gradient(&policy, &batch, &cfg.grpo)?;
            for (tables, grads) in policy.tables.iter_mut().zip(&grad.tables) {
                add_scaled(tables, grads, cfg.step_size);
            }
        }
    }
    Ok((policy, log))
}

fn add_scaled(tables: &mut PromptTables, grads: &PromptTables, step: f64) {
    for (x, g) in tables.function.iter_mut().zip(&grads.function) {
        *x += step * g;
    }
    for (xf, gf) in tables.params.iter_mut().zip(&grads.params) {
        for (xp, gp) in xf.iter_mut().zip(gf) {
            for (x, g) in xp.iter_mut().zip(gp) {
                *x += step * g;
            }
        }
    }
}

pub fn train_sim_rl(task: &ToyTask, cfg: &TrainConfig, iterations: usize, seed: u64) -> Result<TrainLog, ToyError> {
    train(task, cfg, iterations, seed).map(|(_, log)| log)
}

/// Monte-Carlo estimate of the mean reward of `policy` over all prompts.
pub fn evaluate_policy(
    policy: &ToyPolicy,
    task: &ToyTask,
    samples_per_prompt: usize,
    mode: RewardMode,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for prompt_index in 0..task.prompts.len() {
        for _ in 0..samples_per_prompt {
            let trajectory = policy.sample(task, prompt_index, &mut rng);
            total += score(task, prompt_index, &render_trajectory(task, &trajectory), mode);
        }
    }
    total / (task.prompts.len() * samples_per_prompt) as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KdCurves {
    /// Mean student mass outside the teacher top-k, before the first step and
    /// after each step.
    pub escape_mass: Vec<f64>,
    pub entropy: Vec<f64>,
}

/// Gradient descent on free student logits (one row per teacher position)
/// from a seeded random start.
pub fn kd_fit(
    teachers: &[TopKDistribution],
    vocab: usize,
    kind: LossKind,
    params: TailParams,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<KdCurves, ToyError> {
    if teachers.is_empty() {
        return Err(ToyError::InvalidConfig("no teacher positions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = teachers
        .iter()
        .map(|_| (0..vocab).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut curves = KdCurves::default();
    let n = teachers.len() as f64;
    for step in 0..=steps {
        let mut escape = 0.0;
        let mut ent = 0.0;
        for (teacher, row) in teachers.iter().zip(rows.iter_mut()) {
            let student = StudentLogits::new(row.clone())?;
            let report = evaluate(kind, teacher, &student, params)?;
            escape += report.aux.escape_mass / n;
            ent += report.aux.entropy / n;
            if step < steps {
                for (z, g) in row.iter_mut().zip(&report.grad) {
                    *z -= step_size * g;
                }
            }
        }
        curves.escape_mass.push(escape);
        curves.entropy.push(ent);
    }
    Ok(curves)
}

/// Shape of the adversarial teacher family used by the KD demo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherFamily {
    pub vocab: usize,
    pub k: usize,
    pub positions: usize,
    /// Number of top-k entries carrying only `tiny_prob`.
    pub tiny_entries: usize,
    pub tiny_prob: f64,
    /// Geometric decay of the remaining head entries.
    pub decay: f64,
    /// Total teacher mass on the top-k.
    pub mass: f64,
    pub seed: u64,
}

impl Default for TeacherFamily {
    fn default() -> Self {
        TeacherFamily {
            vocab: 64,
            k: 8,
            positions: 16,
            tiny_entries: 3,
            tiny_prob: 1e-4,
            decay: 0.6,
            mass: 0.99,
            seed: 7,
        }
    }
}

/// Teacher slices built to expose the masked reverse-KL failure: each
/// position places a geometric head on a random subset of tokens, followed by
/// top-k tokens with tiny probability, and leaves little mass outside the
/// top-k.
pub fn adversarial_teacher_family(family: &TeacherFamily) -> Result<Vec<TopKDistribution>, ToyError> {
    let TeacherFamily { vocab, k, positions, tiny_entries, tiny_prob, decay, mass, seed } = *family;
    let heads = k.saturating_sub(tiny_entries);
    let head_mass = mass - tiny_prob * tiny_entries as f64;
    if k == 0 || k >= vocab || heads == 0 || !(decay > 0.0) || !(head_mass > 0.0) || mass > 1.0 {
        return Err(ToyError::InvalidConfig(format!("invalid teacher family {family:?}")));
    }
    let weights: Vec<f64> = (0..heads).map(|i| decay.powi(i as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..positions)
        .map(|_| {
            let mut order: Vec<usize> = (0..vocab).collect();
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut entries: Vec<(usize, f64)> =
                weights.iter().enumerate().map(|(i, w)| (order[i], head_mass * w / total)).collect();
            entries.extend(order[heads..k].iter().map(|&i| (i, tiny_prob)));
            Ok(TopKDistribution::new(entries)?)
        })
        .collect()
}

/// The bundled KD-dynamics instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdDemoConfig {
    pub family: TeacherFamily,
    pub params: TailParams,
    pub steps: usize,
    pub step_size: f64,
    pub init_seed: u64,
}

impl Default for KdDemoConfig {
    fn default() -> Self {
        let family = TeacherFamily::default();
        KdDemoConfig {
            family,
            params: TailParams { m: family.vocab - family.k, lambda_tail: crate::divergence::DEFAULT_LAMBDA_TAIL },
            steps: 500,
            step_size: 0.5,
            init_seed: 3,
        }
    }
}

/// Runs every loss kind on the same teachers and student initialization.
pub fn kd_demo(cfg: &KdDemoConfig) -> Result<Vec<(LossKind, KdCurves)>, ToyError> {
    let teachers = adversarial_teacher_family(&cfg.family)?;
    LossKind::ALL
        .iter()
        .filter(|kind| **kind != LossKind::TailPenalty)
        .map(|&kind| {
            let curves = kd_fit(&teachers, cfg.family.vocab, kind, cfg.params, cfg.steps, cfg.step_size, cfg.init_seed)?;
            Ok((kind, curves))
        })
        .collect()
}
