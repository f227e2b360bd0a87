//! Finite-difference verification of the divergence gradients.
//!
//! The numerical side only ever evaluates `loss`, never the analytic
//! gradient, and recomputes every index set at each perturbed point. Instances
//! whose student top-m set could flip under a perturbation are skipped and
//! counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::divergence::{
    evaluate, membership_margin, softmax, topk_of, DivergenceError, LossKind, StudentLogits, TailParams,
    TopKDistribution,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub vocab: usize,
    pub k: usize,
    pub m: usize,
    pub lambda_tail: f64,
    pub trials: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Minimum logit gap at the top-m boundary; smaller gaps are skipped.
    pub margin: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            vocab: 32,
            k: 8,
            m: 16,
            lambda_tail: 10.0,
            trials: 50,
            seed: 0,
            step: 1e-5,
            margin: 1e-4,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindSummary {
    pub kind: LossKind,
    pub checked: usize,
    pub skipped_near_boundary: usize,
    pub max_rel_error: f64,
    pub max_abs_grad_sum: f64,
}

impl KindSummary {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance && self.max_abs_grad_sum <= 1e-8
    }
}

/// Random teacher top-k slice and student logits with standard-normal-ish
/// spreads.
pub fn random_instance<R: Rng>(rng: &mut R, vocab: usize, k: usize) -> (TopKDistribution, StudentLogits) {
    let teacher_z: Vec<f64> = (0..vocab).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let teacher = topk_of(&softmax(&teacher_z), k).expect("k within vocabulary");
    let student_z: Vec<f64> = (0..vocab).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    (teacher, StudentLogits::new(student_z).expect("finite logits"))
}

pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    (0..x.len())
        .map(|i| {
            point[i] = x[i] + step;
            let up = f(&point);
            point[i] = x[i] - step;
            let down = f(&point);
            point[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)` in the Euclidean norm, with a floor of
/// 1e-12 on the denominator.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied())).max(1e-12);
    diff / scale
}

pub fn check_instance(
    kind: LossKind,
    teacher: &TopKDistribution,
    student: &StudentLogits,
    params: TailParams,
    step: f64,
) -> Result<(f64, f64), DivergenceError> {
    let analytic = evaluate(kind, teacher, student, params)?.grad;
    let loss_at = |z: &[f64]| {
        let s = StudentLogits::new(z.to_vec()).expect("perturbed logits stay finite");
        evaluate(kind, teacher, &s, params).map(|r| r.loss).unwrap_or(f64::NAN)
    };
    let numeric = central_difference(loss_at, student.as_slice(), step);
    Ok((relative_error(&analytic, &numeric), analytic.iter().sum::<f64>().abs()))
}

/// Runs `trials` random instances through every loss kind.
pub fn run(cfg: &GradcheckConfig) -> Result<Vec<KindSummary>, DivergenceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = TailParams { m: cfg.m, lambda_tail: cfg.lambda_tail };
    let mut summaries: Vec<KindSummary> = LossKind::ALL
        .iter()
        .map(|&kind| KindSummary {
            kind,
            checked: 0,
            skipped_near_boundary: 0,
            max_rel_error: 0.0,
            max_abs_grad_sum: 0.0,
        })
        .collect();
    for _ in 0..cfg.trials {
        let (teacher, student) = random_instance(&mut rng, cfg.vocab, cfg.k);
        let near_boundary = membership_margin(&student, cfg.m) < cfg.margin;
        for summary in &mut summaries {
            if near_boundary && summary.kind.uses_tail() {
                summary.skipped_near_boundary += 1;
                continue;
            }
            let (rel, sum) = check_instance(summary.kind, &teacher, &student, params, cfg.step)?;
            summary.checked += 1;
            summary.max_rel_error = summary.max_rel_error.max(rel);
            summary.max_abs_grad_sum = summary.max_abs_grad_sum.max(sum);
        }
    }
    Ok(summaries)
}
