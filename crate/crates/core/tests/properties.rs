use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use rankone::diagnostics::{coefficient_split, descent_audit, Reference};
use rankone::format::{parse_point, parse_tensor, write_dense, write_point, TensorFile};
use rankone::generators::gen_b_lambda;
use rankone::oracles::{b_lambda_count, best_rank_one_multistart, random_start, MultistartConfig};
use rankone::tensor::{contraction_matrix_at, inner};
use rankone::{linalg, solve, solve_with_reference, DenseTensor, RankOneRep, SolverConfig};

fn factor(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n).prop_filter("nonzero", |v| linalg::norm(v) > 1e-3)
}

fn rep(dims: Vec<usize>) -> impl Strategy<Value = RankOneRep> {
    dims.into_iter()
        .map(factor)
        .collect::<Vec<_>>()
        .prop_map(|f| RankOneRep::new(f).unwrap())
}

fn dims() -> impl Strategy<Value = Vec<usize>> {
    (3usize..=4).prop_flat_map(|d| prop::collection::vec(2usize..=4, d))
}

fn dense(dims: Vec<usize>) -> impl Strategy<Value = DenseTensor> {
    let len: usize = dims.iter().product();
    prop::collection::vec(-1.0f64..1.0, len).prop_map(move |v| DenseTensor::new(dims.clone(), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rank_one_inner_factorizes((p, q) in dims().prop_flat_map(|d| (rep(d.clone()), rep(d)))) {
        let lhs = inner(&p.evaluate(), &q.evaluate()).unwrap();
        let rhs: f64 = p.factors().iter().zip(q.factors()).map(|(a, b)| linalg::dot(a, b)).product();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn contraction_matrix_transposes((b, p) in dims().prop_flat_map(|d| (dense(d.clone()), rep(d)))) {
        let d = b.order();
        for nu in 0..d {
            for mu in 0..d {
                if nu == mu { continue; }
                let m = contraction_matrix_at(&b, &p, nu, mu).unwrap();
                let mt = contraction_matrix_at(&b, &p, mu, nu).unwrap();
                prop_assert!(m.transpose().max_abs_diff(&mt) <= 1e-14);
            }
        }
    }

    #[test]
    fn split_is_pythagorean((v, r) in dims().prop_flat_map(|d| (dense(d.clone()), dense(d)))) {
        let (c, s) = coefficient_split(&v, &r).unwrap();
        prop_assert!((c * c + s * s - v.norm_sq()).abs() <= 1e-12 * v.norm_sq().max(1.0));
    }

    #[test]
    fn rebalance_keeps_tensor(p in dims().prop_flat_map(rep)) {
        let q = p.rebalanced();
        prop_assert!(p.evaluate().max_abs_diff(&q.evaluate()).unwrap() <= 1e-12 * p.tensor_norm().max(1.0));
        let n: Vec<f64> = q.norms_sq();
        prop_assert!(n.iter().all(|x| (x - n[0]).abs() <= 1e-10 * n[0]));
    }

    #[test]
    fn dense_file_round_trip(b in dims().prop_flat_map(dense)) {
        let text = write_dense(&b);
        match parse_tensor(&text).unwrap() {
            TensorFile::Dense(t) => prop_assert_eq!(t, b),
            other => prop_assert!(false, "parsed as {}", other.kind()),
        }
    }

    #[test]
    fn point_file_round_trip(p in dims().prop_flat_map(rep)) {
        let back = parse_point(&write_point(&p)).unwrap();
        prop_assert!(back.evaluate().max_abs_diff(&p.evaluate()).unwrap() <= 1e-12 * p.tensor_norm().max(1.0));
    }
}

fn seeded_instance(seed: u64, dims: &[usize]) -> (DenseTensor, RankOneRep) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let b = random_start(dims, &mut rng).unwrap().evaluate();
    let noise = random_start(dims, &mut rng).unwrap().evaluate().scale(0.3);
    let b = b.add_scaled(&noise, 1.0).unwrap();
    let init = random_start(dims, &mut rng).unwrap();
    (b, init)
}

#[test]
fn seeded_runs_are_identical() {
    let (b, init) = seeded_instance(17, &[3, 4, 2]);
    let a = solve(&b, &init, &SolverConfig::default()).unwrap();
    let c = solve(&b, &init, &SolverConfig::default()).unwrap();
    assert_eq!(a.rep, c.rep);
    assert_eq!(a.trace.sweep_f, c.trace.sweep_f);
}

#[test]
fn audit_passes_on_random_runs() {
    for seed in 0..20 {
        let (b, init) = seeded_instance(seed, &[3, 3, 3]);
        let cfg = SolverConfig {
            tol_delta_f: None,
            tol_grad: Some(1e-11),
            max_sweeps: 5000,
            ..SolverConfig::default()
        };
        let sol = solve(&b, &init, &cfg).unwrap();
        let report = descent_audit(&sol.trace, 1e-8).unwrap();
        assert!(report.max_identity_residual <= 1e-10);
    }
}

#[test]
fn tangent_recursion_holds_along_run() {
    let (b, init) = seeded_instance(3, &[3, 3, 3]);
    let limit = solve(&b, &init, &SolverConfig::default()).unwrap().rep;
    let reference = Reference::from_rank_one(&limit);
    let sol = solve_with_reference(&b, &init, &SolverConfig::default(), Some(&reference)).unwrap();
    let mut prev = rankone::diagnostics::tan_angle_tensor(&init.evaluate(), &reference.tensor).unwrap();
    let mut checked = 0;
    for r in &sol.trace.records {
        let t = r.tan_angle_ref.unwrap();
        if let (Some(qs), Some(qc)) = (r.q_s, r.q_c) {
            if prev > 1e-6 {
                assert_relative_eq!(t, qs / qc * prev, max_relative = 1e-12);
                checked += 1;
            }
        }
        prev = t;
    }
    assert!(checked > 3);
}

#[test]
fn b_lambda_cluster_count_matches_closed_form() {
    for lambda in [0.3, 0.6] {
        let bl = gen_b_lambda(lambda, 3, 3, 21).unwrap();
        let cfg = MultistartConfig {
            n_starts: 32,
            seed: 1,
            solver: SolverConfig {
                tol_delta_f: None,
                tol_grad: Some(1e-12),
                max_sweeps: 20_000,
                ..SolverConfig::default()
            },
            ..MultistartConfig::default()
        };
        let ms = best_rank_one_multistart(&bl.tensor, &cfg).unwrap();
        assert_eq!(ms.global_clusters().len(), b_lambda_count(lambda).unwrap(), "λ = {lambda}");
    }
}
