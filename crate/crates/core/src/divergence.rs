//! Top-k distillation losses with analytic gradients.
//!
//! Every loss is a function of the student distribution `q = softmax(z)` and
//! returns its gradient with respect to the logits `z`. The teacher's top-k
//! index set `I_k` and the student's "confident but wrong" set
//! `J'_m = top_m(q) \ I_k` are held constant under differentiation, so the
//! gradients are exact away from points where a perturbation would change
//! `J'_m`.
//!
//! Teacher probabilities are used as given; a top-k slice of a softmax sums to
//! at most one and is never renormalized.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default truncation size and tail-set size.
pub const DEFAULT_TOP_K: usize = 100;
/// Default weight of the tail penalty.
pub const DEFAULT_LAMBDA_TAIL: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivergenceError {
    #[error("student probability underflows to zero at teacher index {index}")]
    DegenerateStudent { index: usize },
    #[error("teacher probability is zero at top-k index {index}")]
    DegenerateTeacher { index: usize },
    #[error("index {index} is outside the vocabulary of size {vocab}")]
    IndexOutOfRange { index: usize, vocab: usize },
    #[error("invalid teacher distribution: {0}")]
    InvalidTeacher(String),
    #[error("student logits must be finite and non-empty")]
    InvalidLogits,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// The teacher's k most probable tokens with their (unrenormalized)
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKDistribution {
    entries: Vec<(usize, f64)>,
}

impl TopKDistribution {
    /// Checks distinct indices, probabilities in [0, 1] and total mass at most
    /// `1 + 1e-9`. Zero probabilities are accepted here; losses that divide by
    /// them report [`DivergenceError::DegenerateTeacher`].
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self, DivergenceError> {
        if entries.is_empty() {
            return Err(DivergenceError::InvalidTeacher("k must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        let mut mass = 0.0;
        for &(index, prob) in &entries {
            if !seen.insert(index) {
                return Err(DivergenceError::InvalidTeacher(format!("index {index} repeated")));
            }
            if !(0.0..=1.0).contains(&prob) {
                return Err(DivergenceError::InvalidTeacher(format!(
                    "probability {prob} at index {index} is outside [0, 1]"
                )));
            }
            mass += prob;
        }
        if mass > 1.0 + 1e-9 {
            return Err(DivergenceError::InvalidTeacher(format!("probabilities sum to {mass}")));
        }
        Ok(TopKDistribution { entries })
    }

    pub fn from_parts(indices: &[usize], probs: &[f64]) -> Result<Self, DivergenceError> {
        if indices.len() != probs.len() {
            return Err(DivergenceError::InvalidTeacher(format!(
                "{} indices but {} probabilities",
                indices.len(),
                probs.len()
            )));
        }
        Self::new(indices.iter().copied().zip(probs.iter().copied()).collect())
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(i, _)| i)
    }

    /// Total teacher probability on the top-k set.
    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    /// Keeps the `k` most probable entries (ties to the lower index).
    pub fn truncate(&self, k: usize) -> Result<Self, DivergenceError> {
        if k == 0 {
            return Err(DivergenceError::InvalidParameter("k must be positive".into()));
        }
        let mut entries = self.entries.clone();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        entries.truncate(k);
        Ok(TopKDistribution { entries })
    }

    fn check_vocab(&self, vocab: usize) -> Result<(), DivergenceError> {
        match self.entries.iter().find(|&&(i, _)| i >= vocab) {
            Some(&(index, _)) => Err(DivergenceError::IndexOutOfRange { index, vocab }),
            None => Ok(()),
        }
    }
}

/// Dense student logits over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentLogits(Vec<f64>);

impl StudentLogits {
    pub fn new(z: Vec<f64>) -> Result<Self, DivergenceError> {
        if z.is_empty() || z.iter().any(|v| !v.is_finite()) {
            return Err(DivergenceError::InvalidLogits);
        }
        Ok(StudentLogits(z))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn vocab_size(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossAux {
    /// FKL or masked-RKL part of the loss.
    pub fkl_part: f64,
    /// Weighted tail contribution, so `loss = fkl_part + tail_part`.
    pub tail_part: f64,
    /// Student mass outside the teacher's top-k set.
    pub escape_mass: f64,
    /// Entropy of the student distribution (nats).
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub aux: LossAux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    FklTopk,
    TailPenalty,
    Ckd,
    RklTopkMasked,
    RklTopkStabilized,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::FklTopk,
        LossKind::TailPenalty,
        LossKind::Ckd,
        LossKind::RklTopkMasked,
        LossKind::RklTopkStabilized,
    ];

    /// Short flag name as used on the command line.
    pub fn flag(self) -> &'static str {
        match self {
            LossKind::FklTopk => "fkl",
            LossKind::TailPenalty => "tail",
            LossKind::Ckd => "ckd",
            LossKind::RklTopkMasked => "rkl",
            LossKind::RklTopkStabilized => "rkl-stab",
        }
    }

    /// Whether the loss depends on the student's top-m set.
    pub fn uses_tail(self) -> bool {
        matches!(self, LossKind::TailPenalty | LossKind::Ckd | LossKind::RklTopkStabilized)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fkl" | "fkl_topk" => Ok(LossKind::FklTopk),
            "tail" | "tail_penalty" => Ok(LossKind::TailPenalty),
            "ckd" => Ok(LossKind::Ckd),
            "rkl" | "rkl_topk_masked" => Ok(LossKind::RklTopkMasked),
            "rkl-stab" | "rkl_topk_stabilized" => Ok(LossKind::RklTopkStabilized),
            other => Err(format!("unknown loss `{other}` (expected fkl, tail, ckd, rkl or rkl-stab)")),
        }
    }
}

/// Tail-set size and tail weight shared by the composite losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailParams {
    pub m: usize,
    pub lambda_tail: f64,
}

impl TailParams {
    /// `m = min(100, vocab)` and `lambda_tail = 10`.
    pub fn for_vocab(vocab: usize) -> Self {
        TailParams { m: DEFAULT_TOP_K.min(vocab), lambda_tail: DEFAULT_LAMBDA_TAIL }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - lse).collect()
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy(q: &[f64]) -> f64 {
    0.0 - q.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Indices of the `n` largest values, ties broken toward the lower index.
pub fn top_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

pub fn topk_of(p: &[f64], k: usize) -> Result<TopKDistribution, DivergenceError> {
    if k == 0 || k > p.len() {
        return Err(DivergenceError::InvalidParameter(format!(
            "k = {k} must lie in 1..={}",
            p.len()
        )));
    }
    TopKDistribution::new(top_indices(p, k).into_iter().map(|i| (i, p[i])).collect())
}

/// Student top-m indices that fall outside the teacher's top-k set.
pub fn confident_wrong_set(teacher: &TopKDistribution, student: &StudentLogits, m: usize) -> Vec<usize> {
    let in_topk: HashSet<usize> = teacher.indices().collect();
    top_indices(student.as_slice(), m).into_iter().filter(|i| !in_topk.contains(i)).collect()
}

/// Logit gap between the m-th and (m+1)-th ranked student tokens. A
/// perturbation smaller than half this gap cannot change the top-m set.
pub fn membership_margin(student: &StudentLogits, m: usize) -> f64 {
    let z = student.as_slice();
    if m == 0 || m >= z.len() {
        return f64::INFINITY;
    }
    let order = top_indices(z, m + 1);
    z[order[m - 1]] - z[order[m]]
}

struct Student {
    q: Vec<f64>,
    logq: Vec<f64>,
    in_topk: Vec<bool>,
}

impl Student {
    fn new(teacher: &TopKDistribution, student: &StudentLogits) -> Result<Self, DivergenceError> {
        teacher.check_vocab(student.vocab_size())?;
        let q = student.probs();
        let logq = log_softmax(student.as_slice());
        let mut in_topk = vec![false; q.len()];
        for i in teacher.indices() {
            in_topk[i] = true;
        }
        Ok(Student { q, logq, in_topk })
    }

    fn aux(&self, fkl_part: f64, tail_part: f64) -> LossAux {
        let escape_mass = self.q.iter().zip(&self.in_topk).filter(|(_, &t)| !t).fold(0.0, |acc, (q, _)| acc + q);
        LossAux { fkl_part, tail_part, escape_mass, entropy: entropy(&self.q) }
    }
}

/// Top-k forward KL: `sum_{i in I_k} p_i log(p_i / q_i)`.
///
/// Gradient: `q_j * sum_{I_k} p - p_j * [j in I_k]`.
pub fn fkl_topk(teacher: &TopKDistribution, student: &StudentLogits) -> Result<LossReport, DivergenceError> {
    let s = Student::new(teacher, student)?;
    let (loss, grad) = fkl_parts(teacher, &s)?;
    Ok(LossReport { loss, grad, aux: s.aux(loss, 0.0) })
}

fn fkl_parts(teacher: &TopKDistribution, s: &Student) -> Result<(f64, Vec<f64>), DivergenceError> {
    let mut loss = 0.0;
    for &(i, p) in teacher.entries() {
        if s.q[i] == 0.0 {
            return Err(DivergenceError::DegenerateStudent { index: i });
        }
        if p > 0.0 {
            loss += p * (p.ln() - s.logq[i]);
        }
    }
    let mass = teacher.mass();
    let mut grad: Vec<f64> = s.q.iter().map(|&q| q * mass).collect();
    for &(i, p) in teacher.entries() {
        grad[i] -= p;
    }
    Ok((loss, grad))
}

/// L1 mass on the confident-but-wrong set `J'_m`.
///
/// Gradient: `q_j * [j in J'_m] - q_j * sum_{J'_m} q`.
pub fn tail_penalty(
    teacher: &TopKDistribution,
    student: &StudentLogits,
    m: usize,
) -> Result<LossReport, DivergenceError> {
    let s = Student::new(teacher, student)?;
    let (loss, grad) = tail_parts(teacher, student, &s, m)?;
    Ok(LossReport { loss, grad, aux: s.aux(0.0, loss) })
}

fn tail_parts(
    teacher: &TopKDistribution,
    student: &StudentLogits,
    s: &Student,
    m: usize,
) -> Result<(f64, Vec<f64>), DivergenceError> {
    if m == 0 {
        return Err(DivergenceError::InvalidParameter("m must be at least 1".into()));
    }
    let wrong = confident_wrong_set(teacher, student, m);
    let tail_mass: f64 = wrong.iter().fold(0.0, |acc, &j| acc + s.q[j]);
    let mut grad: Vec<f64> = s.q.iter().map(|&q| -q * tail_mass).collect();
    for &j in &wrong {
        grad[j] += s.q[j];
    }
    Ok((tail_mass, grad))
}

fn check_lambda(lambda_tail: f64) -> Result<(), DivergenceError> {
    if lambda_tail.is_finite() && lambda_tail >= 0.0 {
        Ok(())
    } else {
        Err(DivergenceError::InvalidParameter(format!("lambda_tail = {lambda_tail} must be >= 0")))
    }
}

/// Top-k FKL plus `lambda_tail` times the tail penalty.
pub fn ckd_loss(
    teacher: &TopKDistribution,
    student: &StudentLogits,
    m: usize,
    lambda_tail: f64,
) -> Result<LossReport, DivergenceError> {
    check_lambda(lambda_tail)?;
    let s = Student::new(teacher, student)?;
    let (fkl, mut grad) = fkl_parts(teacher, &s)?;
    let (tail, tail_grad) = tail_parts(teacher, student, &s, m)?;
    for (g, t) in grad.iter_mut().zip(tail_grad) {
        *g += lambda_tail * t;
    }
    let tail_part = lambda_tail * tail;
    Ok(LossReport { loss: fkl + tail_part, grad, aux: s.aux(fkl, tail_part) })
}

/// Masked reverse KL over the teacher's top-k set:
/// `sum_{i in I_k} q_i log(q_i / p_i)`.
///
/// Not a divergence over the full vocabulary: nothing constrains the student
/// mass outside `I_k`, which is what lets it escape.
pub fn rkl_topk_masked(
    teacher: &TopKDistribution,
    student: &StudentLogits,
) -> Result<LossReport, DivergenceError> {
    let s = Student::new(teacher, student)?;
    let (loss, grad) = rkl_parts(teacher, &s)?;
    Ok(LossReport { loss, grad, aux: s.aux(loss, 0.0) })
}

fn rkl_parts(teacher: &TopKDistribution, s: &Student) -> Result<(f64, Vec<f64>), DivergenceError> {
    let mut loss = 0.0;
    // per-index factor log(q_i / p_i) + 1
    let mut factors = Vec::with_capacity(teacher.k());
    for &(i, p) in teacher.entries() {
        if p == 0.0 {
            return Err(DivergenceError::DegenerateTeacher { index: i });
        }
        let log_ratio = s.logq[i] - p.ln();
        loss += s.q[i] * log_ratio;
        factors.push((i, log_ratio + 1.0));
    }
    let big_s: f64 = factors.iter().map(|&(i, f)| s.q[i] * f).sum();
    let mut grad: Vec<f64> = s.q.iter().map(|&q| -q * big_s).collect();
    for (i, f) in factors {
        grad[i] += s.q[i] * f;
    }
    Ok((loss, grad))
}

/// Masked reverse KL plus `lambda_tail` times the tail penalty.
pub fn rkl_topk_stabilized(
    teacher: &TopKDistribution,
    student: &StudentLogits,
    m: usize,
    lambda_tail: f64,
) -> Result<LossReport, DivergenceError> {
    check_lambda(lambda_tail)?;
    let s = Student::new(teacher, student)?;
    let (rkl, mut grad) = rkl_parts(teacher, &s)?;
    let (tail, tail_grad) = tail_parts(teacher, student, &s, m)?;
    for (g, t) in grad.iter_mut().zip(tail_grad) {
        *g += lambda_tail * t;
    }
    let tail_part = lambda_tail * tail;
    Ok(LossReport { loss: rkl + tail_part, grad, aux: s.aux(rkl, tail_part) })
}

/// Evaluates any loss kind; `params` is ignored by the losses that do not use
/// the tail set.
pub fn evaluate(
    kind: LossKind,
    teacher: &TopKDistribution,
    student: &StudentLogits,
    params: TailParams,
) -> Result<LossReport, DivergenceError> {
    match kind {
        LossKind::FklTopk => fkl_topk(teacher, student),
        LossKind::TailPenalty => tail_penalty(teacher, student, params.m),
        LossKind::Ckd => ckd_loss(teacher, student, params.m, params.lambda_tail),
        LossKind::RklTopkMasked => rkl_topk_masked(teacher, student),
        LossKind::RklTopkStabilized => rkl_topk_stabilized(teacher, student, params.m, params.lambda_tail),
    }
}
