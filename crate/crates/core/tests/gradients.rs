use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toolkd_core::divergence::{
    evaluate, fkl_topk, rkl_topk_masked, LossKind, StudentLogits, TailParams, TopKDistribution,
};

const C: usize = 32;
const K: usize = 8;
const M: usize = 16;
const LAMBDA: f64 = 10.0;

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Indices of the `m` largest entries, ties broken toward the lower index.
fn top_m(values: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

struct Instance {
    teacher: Vec<(usize, f64)>,
    z: Vec<f64>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let tz: Vec<f64> = (0..C).map(|_| rng.random_range(-4.0..4.0)).collect();
    let p = softmax(&tz);
    let teacher = top_m(&p, K).into_iter().map(|i| (i, p[i])).collect();
    let z = (0..C).map(|_| rng.random_range(-3.0..3.0)).collect();
    Instance { teacher, z }
}

fn in_teacher(teacher: &[(usize, f64)], j: usize) -> bool {
    teacher.iter().any(|&(i, _)| i == j)
}

fn oracle_fkl(teacher: &[(usize, f64)], z: &[f64]) -> f64 {
    let q = softmax(z);
    teacher.iter().map(|&(i, p)| p * (p.ln() - q[i].ln())).sum()
}

fn oracle_rkl(teacher: &[(usize, f64)], z: &[f64]) -> f64 {
    let q = softmax(z);
    teacher.iter().map(|&(i, p)| q[i] * (q[i].ln() - p.ln())).sum()
}

fn oracle_tail(teacher: &[(usize, f64)], z: &[f64]) -> f64 {
    let q = softmax(z);
    top_m(&q, M).into_iter().filter(|&j| !in_teacher(teacher, j)).map(|j| q[j]).sum::<f64>()
}

fn oracle_loss(kind: LossKind, teacher: &[(usize, f64)], z: &[f64]) -> f64 {
    match kind {
        LossKind::FklTopk => oracle_fkl(teacher, z),
        LossKind::TailPenalty => oracle_tail(teacher, z),
        LossKind::Ckd => oracle_fkl(teacher, z) + LAMBDA * oracle_tail(teacher, z),
        LossKind::RklTopkMasked => oracle_rkl(teacher, z),
        LossKind::RklTopkStabilized => oracle_rkl(teacher, z) + LAMBDA * oracle_tail(teacher, z),
    }
}

fn numeric_gradient(kind: LossKind, teacher: &[(usize, f64)], z: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    (0..z.len())
        .map(|i| {
            let mut up = z.to_vec();
            let mut down = z.to_vec();
            up[i] += h;
            down[i] -= h;
            (oracle_loss(kind, teacher, &up) - oracle_loss(kind, teacher, &down)) / (2.0 * h)
        })
        .collect()
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Gap between the m-th and (m+1)-th largest logit.
fn boundary_gap(z: &[f64]) -> f64 {
    let mut s = z.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s[M - 1] - s[M]
}

fn module_report(kind: LossKind, inst: &Instance) -> toolkd_core::divergence::LossReport {
    let teacher = TopKDistribution::new(inst.teacher.clone()).unwrap();
    let student = StudentLogits::new(inst.z.clone()).unwrap();
    evaluate(kind, &teacher, &student, TailParams { m: M, lambda_tail: LAMBDA }).unwrap()
}

#[test]
fn analytic_gradients_match_independent_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = [0usize; 5];
    for _ in 0..60 {
        let inst = random_instance(&mut rng);
        let near_boundary = boundary_gap(&inst.z) < 1e-4;
        for (slot, &kind) in LossKind::ALL.iter().enumerate() {
            if near_boundary && kind.uses_tail() {
                continue;
            }
            let report = module_report(kind, &inst);
            let oracle = oracle_loss(kind, &inst.teacher, &inst.z);
            assert!((report.loss - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "{kind:?} loss");
            let numeric = numeric_gradient(kind, &inst.teacher, &inst.z);
            let diff = norm(report.grad.iter().zip(&numeric).map(|(a, b)| a - b));
            let scale = norm(report.grad.iter().copied()).max(norm(numeric.iter().copied())).max(1e-12);
            assert!(diff / scale <= 1e-6, "{kind:?}: relative error {}", diff / scale);
            assert!(report.grad.iter().sum::<f64>().abs() <= 1e-8, "{kind:?}: gradient sum");
            checked[slot] += 1;
        }
    }
    assert!(checked.iter().all(|&c| c >= 50), "{checked:?}");
}

#[test]
fn closed_form_gradients_per_index_class() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        let q = softmax(&inst.z);
        let p_mass: f64 = inst.teacher.iter().map(|&(_, p)| p).sum();
        let wrong: Vec<usize> = top_m(&q, M).into_iter().filter(|&j| !in_teacher(&inst.teacher, j)).collect();
        let t: f64 = wrong.iter().map(|&j| q[j]).sum();
        let s: f64 = inst.teacher.iter().map(|&(i, p)| q[i] * ((q[i] / p).ln() + 1.0)).sum();
        let fkl = module_report(LossKind::FklTopk, &inst).grad;
        let rkl = module_report(LossKind::RklTopkMasked, &inst).grad;
        let ckd = module_report(LossKind::Ckd, &inst).grad;
        let stab = module_report(LossKind::RklTopkStabilized, &inst).grad;
        for j in 0..C {
            let teacher_p = inst.teacher.iter().find(|&&(i, _)| i == j).map(|&(_, p)| p);
            let is_wrong = wrong.contains(&j);
            let (e_fkl, e_rkl, e_ckd, e_stab) = match teacher_p {
                Some(p) => (
                    q[j] * p_mass - p,
                    q[j] * ((q[j] / p).ln() + 1.0 - s),
                    q[j] * (p_mass - LAMBDA * t) - p,
                    q[j] * ((q[j] / p).ln() + 1.0 - s - LAMBDA * t),
                ),
                None if is_wrong => (
                    q[j] * p_mass,
                    -q[j] * s,
                    q[j] * (p_mass + LAMBDA * (1.0 - t)),
                    q[j] * (LAMBDA * (1.0 - t) - s),
                ),
                None => (q[j] * p_mass, -q[j] * s, q[j] * (p_mass - LAMBDA * t), -q[j] * (s + LAMBDA * t)),
            };
            for (got, want) in [(fkl[j], e_fkl), (rkl[j], e_rkl), (ckd[j], e_ckd), (stab[j], e_stab)] {
                assert!((got - want).abs() < 1e-12, "index {j}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn fkl_gap_at_equal_probability_is_the_teacher_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let mut inst = random_instance(&mut rng);
        let (j, p_j) = inst.teacher[rng.random_range(0..K)];
        let outside: Vec<usize> = (0..C).filter(|&i| !in_teacher(&inst.teacher, i)).collect();
        let jp = outside[rng.random_range(0..outside.len())];
        inst.z[jp] = inst.z[j];
        let teacher = TopKDistribution::new(inst.teacher.clone()).unwrap();
        let grad = fkl_topk(&teacher, &StudentLogits::new(inst.z.clone()).unwrap()).unwrap().grad;
        assert!((grad[jp] - grad[j] - p_j).abs() <= 1e-12, "gap {} vs p {}", grad[jp] - grad[j], p_j);
        assert!(grad[j] < grad[jp]);
    }
}

#[test]
fn small_descent_steps_reduce_every_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        if boundary_gap(&inst.z) < 1e-2 {
            continue;
        }
        for kind in LossKind::ALL {
            let report = module_report(kind, &inst);
            let g2: f64 = report.grad.iter().map(|g| g * g).sum();
            if g2 < 1e-20 {
                continue;
            }
            let step = 1e-4 / g2.sqrt();
            let moved: Vec<f64> = inst.z.iter().zip(&report.grad).map(|(z, g)| z - step * g).collect();
            let after = module_report(kind, &Instance { teacher: inst.teacher.clone(), z: moved }).loss;
            assert!(after < report.loss, "{kind:?}");
        }
    }
}

/// The frozen three-token instance: teacher top-2 keeps almost all its mass
/// on token 0 and a sliver on token 1; the student's most likely token (2) is
/// outside the teacher top-k.
fn witness() -> (TopKDistribution, StudentLogits, TailParams) {
    let teacher = TopKDistribution::new(vec![(0, 0.9998), (1, 1e-4)]).unwrap();
    let student = StudentLogits::new(vec![0.3f64.ln(), 0.3f64.ln(), 0.4f64.ln()]).unwrap();
    (teacher, student, TailParams { m: 1, lambda_tail: 10.0 })
}

#[test]
fn witness_flips_under_masked_rkl_and_is_restored_by_the_tail_term() {
    let (teacher, student, params) = witness();
    let masked = rkl_topk_masked(&teacher, &student).unwrap().grad;
    assert!(masked[1] > masked[2], "masked RKL pushes the low-probability top-k logit down harder: {masked:?}");
    assert!(masked[2] < 0.0, "and raises the outside logit");
    for kind in [LossKind::RklTopkStabilized, LossKind::Ckd] {
        let g = evaluate(kind, &teacher, &student, params).unwrap().grad;
        assert!(g[2] > g[1], "{kind:?}: {g:?}");
        assert!(g[2] > g[0], "{kind:?}: {g:?}");
    }
}

#[test]
fn witness_family_on_a_grid() {
    // Masked RKL flips and CKD restores at every grid point. Stabilized RKL
    // needs lambda to beat log(q/p), so its restored region excludes the
    // smallest teacher probability with the least confident student.
    let params = TailParams { m: 1, lambda_tail: 10.0 };
    let mut stab_restored = Vec::new();
    for tiny in [1e-5, 1e-4, 1e-3] {
        for q2 in [0.4f64, 0.5, 0.6] {
            let rest: f64 = (1.0 - q2) / 2.0;
            let teacher = TopKDistribution::new(vec![(0, 1.0 - 2.0 * tiny), (1, tiny)]).unwrap();
            let student = StudentLogits::new(vec![rest.ln(), rest.ln(), q2.ln()]).unwrap();
            let masked = rkl_topk_masked(&teacher, &student).unwrap().grad;
            let stab = evaluate(LossKind::RklTopkStabilized, &teacher, &student, params).unwrap().grad;
            let ckd = evaluate(LossKind::Ckd, &teacher, &student, params).unwrap().grad;
            assert!(masked[1] > masked[2], "{tiny} {q2}");
            assert!(ckd[2] > ckd[1], "{tiny} {q2}");
            if stab[2] > stab[1] {
                stab_restored.push((tiny, q2));
            }
        }
    }
    assert_eq!(stab_restored.len(), 8);
    assert!(!stab_restored.contains(&(1e-5, 0.4)));
    assert!(stab_restored.contains(&(1e-4, 0.4)));
}
