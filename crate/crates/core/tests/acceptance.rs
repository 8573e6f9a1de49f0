//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints its PASS/FAIL line; exits non-zero if any line fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use rankone::diagnostics::{basin_angle, basin_tangent, check_sharpness_r2, RateClass};
use rankone::experiments::{self, FigureRun};
use rankone::generators::{gen_b_lambda, gen_mohlenkamp};
use rankone::oracles::{
    best_rank_one_multistart, finite_diff_gradient_check, random_start, singular_certificate, MultistartConfig,
};
use rankone::tensor::{cp_to_dense, gradient_norm, inner};
use rankone::{linalg, solve, DenseTensor, RankOneRep, SolverConfig, SweepState, TerminationReason};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_tensor(dims: &[usize], rng: &mut Xoshiro256PlusPlus) -> DenseTensor {
    let len = dims.iter().product();
    let values = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseTensor::new(dims.to_vec(), values).unwrap()
}

#[derive(Default)]
struct IdentityStats {
    value: f64,
    descent: f64,
    gram: f64,
    idempotent: f64,
    adjoint: f64,
    steps: usize,
}

impl IdentityStats {
    fn merge(&mut self, o: &IdentityStats) {
        self.value = self.value.max(o.value);
        self.descent = self.descent.max(o.descent);
        self.gram = self.gram.max(o.gram);
        self.idempotent = self.idempotent.max(o.idempotent);
        self.adjoint = self.adjoint.max(o.adjoint);
        self.steps += o.steps;
    }

    fn ok(&self) -> bool {
        self.value <= 1e-12 && self.descent <= 1e-10 && self.gram <= 1e-12 && self.idempotent <= 1e-12 && self.adjoint <= 1e-12
    }

    fn describe(&self) -> String {
        format!(
            "steps={} value={:.1e} descent={:.1e} gram={:.1e} idempotence={:.1e} adjoint={:.1e}",
            self.steps, self.value, self.descent, self.gram, self.idempotent, self.adjoint
        )
    }
}

/// Drives the sweep state by hand so the Gram route can be evaluated before
/// every committed micro step.
fn identity_run(b: &DenseTensor, init: RankOneRep, max_sweeps: usize, rng: &mut Xoshiro256PlusPlus) -> IdentityStats {
    let d = b.order();
    let mut st = SweepState::new(b, init, (0..d).collect()).unwrap();
    let mut s = IdentityStats::default();
    for _ in 0..max_sweeps {
        let f_start = st.f();
        let mut grad = 0.0;
        for _ in 0..d {
            let mu = st.next_mode();
            let gram = st.gram_micro_step(b, mu).ok();

            let t = random_tensor(b.dims(), rng);
            let u = random_tensor(b.dims(), rng);
            let pt = st.projection_apply(mu, &t).unwrap();
            let ppt = st.projection_apply(mu, &pt).unwrap();
            let pu = st.projection_apply(mu, &u).unwrap();
            s.idempotent = s.idempotent.max(ppt.sub(&pt).unwrap().norm() / t.norm());
            let lhs = inner(&pt, &u).unwrap();
            let rhs = inner(&t, &pu).unwrap();
            s.adjoint = s.adjoint.max((lhs - rhs).abs() / (t.norm() * u.norm()));

            let rec = st.step(b, None).unwrap();
            s.value = s.value.max(rec.value_identity_residual / rec.f_after.abs().max(1.0));
            s.descent = s.descent.max(rec.identity_residual);
            if let Some(g) = gram {
                let diff = linalg::max_abs_diff(&g, &rec.factor_after);
                s.gram = s.gram.max(diff / linalg::norm(&rec.factor_after));
            }
            grad = rec.grad_norm;
            s.steps += 1;
        }
        let f_end = st.f();
        if grad <= 1e-10 || f_start - f_end <= 1e-15 * f_end.abs() {
            break;
        }
    }
    s
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
    let mut total = IdentityStats::default();
    for _ in 0..200 {
        let d = rng.random_range(3..=4);
        let dims: Vec<usize> = (0..d).map(|_| rng.random_range(2..=4)).collect();
        let b = random_tensor(&dims, &mut rng);
        let init = random_start(&dims, &mut rng).unwrap();
        let s = identity_run(&b, init, 300, &mut rng);
        total.merge(&s);
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        total.ok() && secs < 60.0,
        format!("200 instances, {} time={secs:.2}s", total.describe()),
    )
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let cfg = SolverConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (taus, term, target) in [
        (experiments::TAU_LOWER, 1usize, -0.1),
        (experiments::TAU_UPPER, 0usize, -0.4),
    ] {
        for tau in taus {
            let sol = experiments::mohlenkamp_run(tau, term, &cfg).unwrap();
            let f = sol.final_f();
            let run = FigureRun::from_solution(format!("{tau}"), sol, f64::MIN_POSITIVE, experiments::SUPERLINEAR_WINDOW);
            let last = run.ratios.last().copied().unwrap_or(f64::NAN);
            let class = run.rate().map(|e| e.classification);
            let ok = (f - target).abs() <= 1e-9 && last < 1e-3 && class == Ok(RateClass::QSuperlinear);
            pass &= ok;
            parts.push(format!("tau={tau}: f={f:.12} last_q={last:.1e}"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(pass && secs < 5.0, format!("{} time={secs:.2}s", parts.join("; ")))
}

fn criterion_3() -> Outcome {
    let cp = gen_mohlenkamp();
    let cfg = SolverConfig::default();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (taus, term) in [(experiments::TAU_LOWER, 1usize), (experiments::TAU_UPPER, 0usize)] {
        for tau in taus {
            let sol = experiments::mohlenkamp_run(tau, term, &cfg).unwrap();
            let rep = check_sharpness_r2(&cp, &sol.trace, term).unwrap();
            worst = worst.max(rep.max_deviation);
            checked += rep.checked_steps;
        }
    }
    outcome(
        worst <= 1e-10 && checked > 0,
        format!("checked_steps={checked} max_deviation={worst:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let t0 = Instant::now();

    let (_, sol) = experiments::b_lambda_run(0.2, &experiments::linear_config()).unwrap();
    let run = FigureRun::from_solution("0.2".into(), sol, experiments::B_LAMBDA_FLOOR, experiments::B_LAMBDA_LINEAR_WINDOW);
    let q02 = run.rate().map(|e| e.q_limsup).unwrap_or(f64::NAN);
    let ok02 = (q02 - 0.173982).abs() <= 0.01;

    let (_, sol) = experiments::b_lambda_run(0.5, &experiments::sublinear_config()).unwrap();
    let sweeps = sol.trace.sweeps();
    let run = FigureRun::from_solution("0.5".into(), sol, experiments::B_LAMBDA_FLOOR, 20);
    let est = run.rate().unwrap();
    let ok05 = sweeps >= 5000
        && est.classification == RateClass::Sublinear
        && est.tail.iter().all(|&q| (0.99..=1.0).contains(&q));

    let bl = gen_b_lambda(0.7, 3, experiments::B_LAMBDA_N, experiments::B_LAMBDA_SEED).unwrap();
    let ms = best_rank_one_multistart(&bl.tensor, &tight_multistart()).unwrap();
    let alpha = (0.4f64 / 0.7).sqrt();
    let globals = ms.global_clusters();
    let mut alphas: Vec<f64> = globals
        .iter()
        .map(|c| {
            // every factor is a multiple of p + α q
            let a: Vec<f64> = c
                .representative
                .factors()
                .iter()
                .map(|x| linalg::dot(x, &bl.q) / linalg::dot(x, &bl.p))
                .collect();
            if a.iter().all(|&ai| (ai - a[0]).abs() <= 1e-8) {
                a[0]
            } else {
                f64::NAN
            }
        })
        .collect();
    alphas.sort_by(f64::total_cmp);
    let ok07 = globals.len() == 2
        && (alphas[0] + alpha).abs() <= 1e-8
        && (alphas[1] - alpha).abs() <= 1e-8;

    let secs = t0.elapsed().as_secs_f64();
    outcome(
        ok02 && ok05 && ok07 && secs < 120.0,
        format!(
            "lambda=0.2 q={q02:.6}; lambda=0.5 {} q_limsup={:.6} sweeps={sweeps}; lambda=0.7 global_clusters={} alphas={alphas:?} expected=±{alpha:.10}; time={secs:.2}s",
            est.classification,
            est.q_limsup,
            globals.len()
        ),
    )
}

fn tight_multistart() -> MultistartConfig {
    MultistartConfig {
        n_starts: 64,
        seed: 5,
        solver: SolverConfig {
            max_sweeps: 20_000,
            tol_grad: Some(1e-13),
            tol_delta_f: None,
            ..SolverConfig::default()
        },
        ..MultistartConfig::default()
    }
}

/// Global minimizers confirmed by the multistart oracle, one per cluster.
fn confirmed_globals(b: &DenseTensor) -> Vec<RankOneRep> {
    let ms = best_rank_one_multistart(b, &tight_multistart()).unwrap();
    ms.global_clusters()
        .into_iter()
        .map(|c| c.representative.clone())
        .collect()
}

fn max_cert_mismatch(p: &RankOneRep, b: &DenseTensor) -> Result<f64, String> {
    let d = p.order();
    let mut worst: f64 = 0.0;
    for nu in 0..d {
        for mu in 0..d {
            if nu == mu {
                continue;
            }
            let c = singular_certificate(p, b, nu, mu).map_err(|e| e.to_string())?;
            worst = worst.max((c.sigma_max - c.norm_v).abs());
        }
    }
    Ok(worst)
}

fn criterion_5a() -> Outcome {
    let mut targets = vec![("mohlenkamp", cp_to_dense(&gen_mohlenkamp()))];
    for lambda in [0.2, 0.7] {
        let name = if lambda == 0.2 { "b_lambda(0.2)" } else { "b_lambda(0.7)" };
        let bl = gen_b_lambda(lambda, 3, experiments::B_LAMBDA_N, experiments::B_LAMBDA_SEED).unwrap();
        targets.push((name, bl.tensor));
    }
    let (ordering_b, _) = experiments::ordering_runs().unwrap();
    targets.push(("ordering", ordering_b));
    let (order4_b, _) = experiments::order4_run().unwrap();
    targets.push(("order4", order4_b));

    let mut pass = true;
    let mut parts = Vec::new();
    let mut points = 0;
    for (name, b) in &targets {
        let mut worst: f64 = 0.0;
        for p in confirmed_globals(b) {
            points += 1;
            match max_cert_mismatch(&p, b) {
                Ok(w) => worst = worst.max(w),
                Err(e) => {
                    pass = false;
                    parts.push(format!("{name}: {e}"));
                }
            }
        }
        pass &= worst <= 1e-8;
        parts.push(format!("{name}: max|sigma_max-norm_v|={worst:.1e}"));
    }
    outcome(pass, format!("{points} global minimizers; {}", parts.join("; ")))
}

fn criterion_5b() -> Outcome {
    let cp = gen_mohlenkamp();
    let b = cp_to_dense(&cp);
    let local = cp.term(1);
    let mut pass = true;
    let mut seen = Vec::new();
    for nu in 0..3 {
        for mu in 0..3 {
            if nu == mu {
                continue;
            }
            match singular_certificate(&local, &b, nu, mu) {
                Ok(c) => {
                    pass &= c.is_singular_value && !c.matches_norm && c.sigma_max == 2.0;
                    seen.push(format!(
                        "({},{}) sv={:?} matches_norm={}",
                        nu + 1,
                        mu + 1,
                        c.singular_values,
                        c.matches_norm
                    ));
                }
                Err(e) => {
                    pass = false;
                    seen.push(e.to_string());
                }
            }
        }
    }
    outcome(
        pass,
        format!(
            "expected sigma_max=2 and matches_norm=false at e2⊗e2⊗e2; got {}",
            seen.join("; ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let expected = [2.0, 2f64.sqrt(), 2f64.powf(1.0 / 3.0)];
    let got: Vec<f64> = (3..=5).map(|d| basin_tangent(2.0, 1.0, d).unwrap()).collect();
    let exact = got.iter().zip(&expected).all(|(g, e)| (g - e).abs() <= 1e-14);
    let angles: Vec<f64> = (3..=60).map(|d| basin_angle(2.0, 1.0, d).unwrap()).collect();
    let quarter = std::f64::consts::FRAC_PI_4;
    let decreasing = angles.windows(2).all(|w| w[1] < w[0]) && angles.iter().all(|&a| a > quarter);
    let approach = angles.last().unwrap() - quarter;
    outcome(
        exact && decreasing && approach < 0.02,
        format!("tangents={got:?} angle(60)-pi/4={approach:.2e}"),
    )
}

fn criterion_7() -> Outcome {
    let (b, runs) = experiments::ordering_runs().unwrap();
    let (lambda, _, _) = experiments::ORDERING_PARAMS;
    let bb = b.norm_sq();
    let ms = best_rank_one_multistart(&b, &tight_multistart()).unwrap();
    let cluster_of = |p: &RankOneRep| {
        let v = p.evaluate();
        ms.clusters
            .iter()
            .find(|c| c.representative.evaluate().sub(&v).unwrap().norm() <= 1e-6 * b.norm())
            .map(|c| (c.id, c.global))
    };
    let a = cluster_of(&runs[0].solution.rep);
    let c = cluster_of(&runs[1].solution.rep);
    let fa = runs[0].solution.final_f();
    let fc = runs[1].solution.final_f();
    let identities = runs
        .iter()
        .all(|o| (o.solution.final_f() - o.f_from_norm).abs() <= 1e-12);
    let gap = (1.0 - lambda * lambda) / (2.0 * bb);
    let distinct = matches!((a, c), (Some((ia, true)), Some((ic, false))) if ia != ic);
    outcome(
        distinct && identities && ((fc - fa) - gap).abs() <= 1e-10,
        format!(
            "order(1,2,3) f={fa:.12} cluster={a:?}; order(1,3,2) f={fc:.12} cluster={c:?}; gap={:.12} predicted={gap:.12}",
            fc - fa
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
    let mut fd_worst: f64 = 0.0;
    let mut converged = 0;
    let mut grad_ok = true;
    let tol = 1e-10;
    let cfg = SolverConfig {
        tol_grad: Some(tol),
        tol_delta_f: None,
        max_sweeps: 20_000,
        ..SolverConfig::default()
    };
    for _ in 0..20 {
        let d = rng.random_range(3..=4);
        let dims: Vec<usize> = (0..d).map(|_| rng.random_range(2..=4)).collect();
        let b = random_tensor(&dims, &mut rng);
        let p = random_start(&dims, &mut rng).unwrap();
        fd_worst = fd_worst.max(finite_diff_gradient_check(&p, &b, 1e-6).unwrap());
        let sol = solve(&b, &p, &cfg).unwrap();
        if sol.termination == TerminationReason::GradientTolerance {
            converged += 1;
            let g = gradient_norm(&sol.rep, &b).unwrap();
            grad_ok &= g <= tol && *sol.trace.sweep_grad.last().unwrap() <= tol;
        }
    }
    outcome(
        fd_worst <= 1e-6 && grad_ok && converged > 0,
        format!("fd_max_dev={fd_worst:.2e} converged_runs={converged}/20 terminal_grad_ok={grad_ok}"),
    )
}

fn criterion_9() -> Outcome {
    let (b, sol) = experiments::order4_run().unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
    let s = identity_run(&b, sol.trace.init.clone(), 300, &mut rng);
    let run = FigureRun::from_solution("order4".into(), sol, experiments::ORDER4_FLOOR, experiments::ORDER4_WINDOW);
    let est = run.rate();
    let class_ok = matches!(
        est.as_ref().map(|e| e.classification),
        Ok(RateClass::QLinear(_) | RateClass::QSuperlinear)
    );
    let class = est
        .map(|e| format!("{} q_limsup={:.4}", e.classification, e.q_limsup))
        .unwrap_or_else(|e| e.to_string());
    outcome(s.ok() && class_ok, format!("{class}; identities {}", s.describe()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 identity suite", criterion_1),
        ("2 mohlenkamp basins", criterion_2),
        ("3 sharpness", criterion_3),
        ("4 b_lambda rates", criterion_4),
        ("5a certificate at global minimizers", criterion_5a),
        ("5b certificate at the local minimizer", criterion_5b),
        ("6 basin angle", criterion_6),
        ("7 ordering bifurcation", criterion_7),
        ("8 gradient validity", criterion_8),
        ("9 order-4 tucker", criterion_9),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
