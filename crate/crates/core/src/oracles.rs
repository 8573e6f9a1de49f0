//! Ground-truth checks that do not reuse the solver's update path:
//! stationarity residuals, singular-value certificates, a multistart search
//! for the best rank-one approximation, closed forms for the `b_λ` family and
//! a finite-difference gradient check.

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::als::{self, QuietSolution, SolverConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::tensor::{self, contraction_matrix, objective_f, DenseTensor, RankOneRep};

/// Threshold on the stationarity residual, relative to `‖b‖`.
pub const STATIONARY_TOL: f64 = 1e-8;

fn unit_factors(p: &RankOneRep) -> Result<Vec<Vec<f64>>> {
    p.factors()
        .iter()
        .enumerate()
        .map(|(m, f)| linalg::normalized(f).ok_or(Error::DegenerateFactor { mode: m }))
        .collect()
}

fn partial_without(factors: &[Vec<f64>], nu: usize, mu: usize) -> Vec<Vec<f64>> {
    factors
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != nu && m != mu)
        .map(|(_, f)| f.clone())
        .collect()
}

/// `max_{ν≠μ} ‖M_{ν,μ} p̂_ν − λ p̂_μ‖` with `λ = ⟨⊗ p̂_μ, b⟩`.
pub fn stationarity_residual(p: &RankOneRep, b: &DenseTensor) -> Result<f64> {
    let unit = unit_factors(p)?;
    let unit_rep = RankOneRep::new(unit.clone())?;
    let lambda = tensor::inner_rank_one(b, &unit_rep)?;
    let d = p.order();
    let mut worst: f64 = 0.0;
    for nu in 0..d {
        for mu in 0..d {
            if nu == mu {
                continue;
            }
            let m = contraction_matrix(b, &partial_without(&unit, nu, mu), nu, mu)?;
            let mp = m.matvec(&unit[nu]);
            let res: f64 = mp
                .iter()
                .zip(&unit[mu])
                .map(|(x, y)| (x - lambda * y).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(res);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularCertificate {
    pub sigma_max: f64,
    /// `σ_1 − σ_2` (or `σ_1` when the matrix has a single singular value).
    pub gap: f64,
    /// `‖U(p)‖`.
    pub norm_v: f64,
    /// `|σ_max − ‖U(p)‖| ≤ 1e-8 σ_max`.
    pub matches_norm: bool,
    /// Whether `‖U(p)‖` equals some singular value to the same tolerance.
    pub is_singular_value: bool,
    pub singular_values: Vec<f64>,
}

/// Singular values of `M_{ν,μ}` at a stationary point `p`.
pub fn singular_certificate(
    p: &RankOneRep,
    b: &DenseTensor,
    nu: usize,
    mu: usize,
) -> Result<SingularCertificate> {
    let res = stationarity_residual(p, b)?;
    if !(res < STATIONARY_TOL * b.norm()) {
        return Err(Error::NotStationary(res));
    }
    let unit = unit_factors(p)?;
    let m = contraction_matrix(b, &partial_without(&unit, nu, mu), nu, mu)?;
    let s = linalg::svd(&m).singular_values;
    let sigma_max = s[0];
    let gap = sigma_max - s.get(1).copied().unwrap_or(0.0);
    let norm_v = p.tensor_norm();
    let tol = 1e-8 * sigma_max;
    Ok(SingularCertificate {
        sigma_max,
        gap,
        norm_v,
        matches_norm: (sigma_max - norm_v).abs() <= tol,
        is_singular_value: s.iter().any(|&x| (x - norm_v).abs() <= tol),
        singular_values: s,
    })
}

/// Largest deviation in `f(v) = −‖v‖²/(2‖b‖²) = −⟨b, v⟩/(2‖b‖²)`.
pub fn global_min_identity_residual(p: &RankOneRep, b: &DenseTensor) -> Result<f64> {
    let v = p.evaluate();
    let f = objective_f(&v, b)?;
    let bb = b.norm_sq();
    let by_norm = -v.norm_sq() / (2.0 * bb);
    let by_inner = -tensor::inner(b, &v)? / (2.0 * bb);
    Ok((f - by_norm).abs().max((f - by_inner).abs()))
}

/// Top left singular vector of each mode unfolding.
pub fn hosvd_start(b: &DenseTensor) -> Result<RankOneRep> {
    let dims = b.dims().to_vec();
    let mut factors = Vec::with_capacity(dims.len());
    for (mode, &n) in dims.iter().enumerate() {
        let right: usize = dims[mode + 1..].iter().product();
        let left: usize = dims[..mode].iter().product();
        let mut gram = Matrix::zeros(n, n);
        let vals = b.values();
        for l in 0..left {
            for r in 0..right {
                for i in 0..n {
                    let x = vals[(l * n + i) * right + r];
                    if x == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        gram[(i, j)] += x * vals[(l * n + j) * right + r];
                    }
                }
            }
        }
        let u = linalg::svd(&gram).u.column(0);
        if linalg::norm_sq(&u) == 0.0 {
            return Err(Error::ZeroTarget);
        }
        factors.push(u);
    }
    RankOneRep::new(factors)
}

/// Uniform entries in `[-1, 1)` for every factor.
pub fn random_start<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<RankOneRep> {
    let factors = dims
        .iter()
        .map(|&n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    RankOneRep::new(factors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistartConfig {
    pub n_starts: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Clusters within this distance of the best `f` count as global.
    pub f_tol: f64,
    /// Terminal tensors closer than `v_tol · ‖b‖` share a cluster.
    pub v_tol: f64,
    /// Tolerance for grouping distinct local values of `f`.
    pub value_tol: f64,
}

impl Default for MultistartConfig {
    fn default() -> Self {
        MultistartConfig {
            n_starts: 64,
            seed: 0,
            solver: SolverConfig::default(),
            f_tol: 1e-8,
            v_tol: 1e-6,
            value_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartKind {
    Random { seed: u64 },
    Hosvd,
}

#[derive(Debug, Clone)]
pub struct StartOutcome {
    pub kind: StartKind,
    pub result: std::result::Result<StartResult, Error>,
}

#[derive(Debug, Clone)]
pub struct StartResult {
    pub solution: QuietSolution,
    pub residual: f64,
    pub cluster: usize,
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub id: usize,
    /// Lowest `f` among the members.
    pub f: f64,
    pub norm_v: f64,
    pub members: usize,
    pub representative: RankOneRep,
    pub global: bool,
}

#[derive(Debug, Clone)]
pub struct MultistartResult {
    pub best: RankOneRep,
    pub f_star: f64,
    /// Distinct terminal values of `f`, ascending.
    pub local_values: Vec<f64>,
    pub clusters: Vec<Cluster>,
    pub outcomes: Vec<StartOutcome>,
}

impl MultistartResult {
    pub fn global_clusters(&self) -> Vec<&Cluster> {
        self.clusters.iter().filter(|c| c.global).collect()
    }
}

/// Runs the solver from seeded random starts and one unfolding-based start
/// in parallel and groups the terminal tensors.
pub fn best_rank_one_multistart(b: &DenseTensor, cfg: &MultistartConfig) -> Result<MultistartResult> {
    if cfg.n_starts == 0 {
        return Err(Error::InvalidConfig("n_starts must be at least 1".into()));
    }
    if b.norm_sq() == 0.0 {
        return Err(Error::ZeroTarget);
    }
    let mut master = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let mut kinds: Vec<StartKind> = (0..cfg.n_starts)
        .map(|_| StartKind::Random {
            seed: master.next_u64(),
        })
        .collect();
    kinds.push(StartKind::Hosvd);

    let runs: Vec<(StartKind, Result<(QuietSolution, f64)>)> = kinds
        .par_iter()
        .map(|&kind| {
            let run = || -> Result<(QuietSolution, f64)> {
                let init = match kind {
                    StartKind::Random { seed } => {
                        random_start(b.dims(), &mut Xoshiro256PlusPlus::seed_from_u64(seed))?
                    }
                    StartKind::Hosvd => hosvd_start(b)?,
                };
                let sol = als::solve_quiet(b, &init, &cfg.solver)?;
                let res = stationarity_residual(&sol.rep, b)?;
                Ok((sol, res))
            };
            (kind, run())
        })
        .collect();

    let ok: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].1.is_ok()).collect();
    if ok.is_empty() {
        let err = runs.into_iter().find_map(|(_, r)| r.err()).expect("some start ran");
        return Err(err);
    }
    let tensors: Vec<DenseTensor> = ok
        .iter()
        .map(|&i| runs[i].1.as_ref().expect("ok").0.rep.evaluate())
        .collect();

    // single-linkage grouping by distance between represented tensors
    let scale = cfg.v_tol * b.norm();
    let mut label: Vec<usize> = (0..tensors.len()).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for i in 0..tensors.len() {
        for j in i + 1..tensors.len() {
            let dist = tensors[i].sub(&tensors[j])?.norm();
            if dist <= scale {
                let (ri, rj) = (root(&mut label, i), root(&mut label, j));
                if ri != rj {
                    label[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..tensors.len()).map(|i| root(&mut label, i)).collect();
    let mut distinct: Vec<usize> = roots.clone();
    distinct.sort_unstable();
    distinct.dedup();

    let f_of = |k: usize| runs[ok[k]].1.as_ref().expect("ok").0.f;
    let mut grouped: Vec<(usize, Cluster)> = distinct
        .iter()
        .map(|&r| {
            let members: Vec<usize> = (0..tensors.len()).filter(|&k| roots[k] == r).collect();
            let best = *members
                .iter()
                .min_by(|&&a, &&b| f_of(a).total_cmp(&f_of(b)))
                .expect("non-empty");
            let rep = runs[ok[best]].1.as_ref().expect("ok").0.rep.clone();
            (r, Cluster {
                id: 0,
                f: f_of(best),
                norm_v: rep.tensor_norm(),
                members: members.len(),
                representative: rep,
                global: false,
            })
        })
        .collect();
    grouped.sort_by(|a, b| a.1.f.total_cmp(&b.1.f));
    let cluster_roots: Vec<usize> = grouped.iter().map(|g| g.0).collect();
    let mut clusters: Vec<Cluster> = grouped.into_iter().map(|g| g.1).collect();
    let f_star = clusters[0].f;
    for (id, c) in clusters.iter_mut().enumerate() {
        c.id = id;
        c.global = c.f <= f_star + cfg.f_tol;
    }
    let cluster_of_root = |r: usize| {
        cluster_roots
            .iter()
            .position(|&c| c == r)
            .expect("cluster exists")
    };

    let mut values: Vec<f64> = (0..tensors.len()).map(f_of).collect();
    values.sort_by(f64::total_cmp);
    let mut local_values: Vec<f64> = Vec::new();
    for v in values {
        if local_values.last().is_none_or(|&l| v - l > cfg.value_tol) {
            local_values.push(v);
        }
    }

    let mut ok_pos = 0;
    let outcomes = runs
        .into_iter()
        .map(|(kind, r)| {
            let result = match r {
                Ok((solution, residual)) => {
                    let cluster = cluster_of_root(roots[ok_pos]);
                    ok_pos += 1;
                    Ok(StartResult {
                        solution,
                        residual,
                        cluster,
                    })
                }
                Err(e) => Err(e),
            };
            StartOutcome { kind, result }
        })
        .collect();

    Ok(MultistartResult {
        best: clusters[0].representative.clone(),
        f_star,
        local_values,
        clusters,
        outcomes,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(Error::NegativeLambda(lambda));
    }
    Ok(())
}

/// Solutions `α` of the stationarity equation for `b_λ`.
pub fn b_lambda_alphas(lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    if lambda <= 0.5 {
        return Ok(vec![0.0]);
    }
    let a = ((2.0 * lambda - 1.0) / lambda).sqrt();
    Ok(vec![0.0, a, -a])
}

/// Number of best rank-one approximations of `b_λ` (order 3).
pub fn b_lambda_count(lambda: f64) -> Result<usize> {
    check_lambda(lambda)?;
    Ok(if lambda <= 0.5 { 1 } else { 2 })
}

/// Per-sweep tangent ratio `ρ(λ)` for `0 ≤ λ < ½`.
pub fn b_lambda_rate(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if lambda >= 0.5 {
        return Err(Error::OutOfRange(format!(
            "rate formula holds for λ < 1/2, got {lambda}"
        )));
    }
    let t = 3.0 * lambda + lambda * lambda;
    Ok(0.5 * lambda * (t + (t * t + 4.0 * lambda).sqrt()))
}

/// Largest `λ` with a unique best approximation in order `d`.
pub fn b_lambda_threshold(d: usize) -> Result<f64> {
    if d < 3 {
        return Err(Error::OrderTooSmall(d));
    }
    Ok(1.0 / (d as f64 - 1.0))
}

/// Max absolute deviation between the analytic gradient of `F = f ∘ U` and
/// central differences with step `h`.
pub fn finite_diff_gradient_check(p: &RankOneRep, b: &DenseTensor, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig("step must be positive".into()));
    }
    let grad = tensor::gradient_f(p, b)?;
    let eval = |factors: Vec<Vec<f64>>| -> Result<f64> {
        // perturbations can zero a coordinate but never a whole factor of a valid point at small h
        let rep = RankOneRep::new(factors)?;
        objective_f(&rep.evaluate(), b)
    };
    let mut worst: f64 = 0.0;
    for (m, g) in grad.iter().enumerate() {
        for (i, &gi) in g.iter().enumerate() {
            let mut plus = p.factors().to_vec();
            let mut minus = p.factors().to_vec();
            plus[m][i] += h;
            minus[m][i] -= h;
            let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
            worst = worst.max((fd - gi).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{cp_to_dense, CpTensor};

    fn mohlenkamp() -> DenseTensor {
        cp_to_dense(&CpTensor::new(vec![2.0, 1.0], vec![Matrix::identity(2); 3], true).unwrap())
    }

    fn e(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; 2];
        v[i] = 1.0;
        v
    }

    #[test]
    fn residual_at_critical_and_generic_points() {
        let b = mohlenkamp();
        let p = RankOneRep::new(vec![e(0), e(0), e(0)]).unwrap();
        assert_eq!(stationarity_residual(&p, &b).unwrap(), 0.0);
        let q = RankOneRep::new(vec![vec![1.0, 0.4]; 3]).unwrap();
        assert!(stationarity_residual(&q, &b).unwrap() > 1e-3);
    }

    #[test]
    fn certificate_at_global_point() {
        let b = mohlenkamp();
        let p = RankOneRep::new(vec![vec![2.0, 0.0], e(0), e(0)]).unwrap();
        let c = singular_certificate(&p, &b, 0, 2).unwrap();
        // the fixed factor is e1, so M = diag(2, 0)
        assert_eq!(c.singular_values, vec![2.0, 0.0]);
        assert_eq!(c.sigma_max, 2.0);
        assert_eq!(c.gap, 2.0);
        assert!(c.matches_norm);
    }

    #[test]
    fn certificate_at_local_point() {
        let b = mohlenkamp();
        let p = RankOneRep::new(vec![e(1), e(1), e(1)]).unwrap();
        let c = singular_certificate(&p, &b, 0, 1).unwrap();
        // the fixed factor is e2, so M = diag(0, 1)
        assert_eq!(c.singular_values, vec![1.0, 0.0]);
        assert!(c.is_singular_value);
        assert_eq!(c.norm_v, 1.0);
    }

    #[test]
    fn certificate_rejects_non_stationary_points() {
        let b = mohlenkamp();
        let q = RankOneRep::new(vec![vec![1.0, 0.4]; 3]).unwrap();
        assert!(matches!(singular_certificate(&q, &b, 0, 1), Err(Error::NotStationary(_))));
    }

    #[test]
    fn certificate_for_rank_one_target() {
        let q = RankOneRep::new(vec![vec![0.6, 0.8], vec![3.0, 0.0, 4.0], vec![1.0, 1.0]]).unwrap();
        let b = q.evaluate();
        let c = singular_certificate(&q, &b, 1, 2).unwrap();
        assert!((c.sigma_max - b.norm()).abs() < 1e-12);
        assert!((c.gap - c.sigma_max).abs() < 1e-12);
    }

    #[test]
    fn b_lambda_closed_forms() {
        assert_eq!(b_lambda_alphas(1.0).unwrap(), vec![0.0, 1.0, -1.0]);
        assert_eq!(b_lambda_count(1.0).unwrap(), 2);
        assert_eq!(b_lambda_alphas(0.5).unwrap(), vec![0.0]);
        assert_eq!(b_lambda_count(0.5).unwrap(), 1);
        assert_eq!(b_lambda_count(0.0).unwrap(), 1);
        assert_eq!(b_lambda_alphas(-0.1), Err(Error::NegativeLambda(-0.1)));
        assert!(matches!(b_lambda_rate(0.5), Err(Error::OutOfRange(_))));
        assert_eq!(b_lambda_rate(0.0).unwrap(), 0.0);
        assert_eq!(b_lambda_threshold(3).unwrap(), 0.5);
        assert_eq!(b_lambda_threshold(2), Err(Error::OrderTooSmall(2)));
    }

    #[test]
    fn rate_at_point_two() {
        // 3λ+λ² = 0.64, ρ = 0.1·(0.64 + √1.2096)
        let rho = b_lambda_rate(0.2).unwrap();
        assert!((rho - 0.1 * (0.64 + 1.2096f64.sqrt())).abs() < 1e-15);
        assert!((rho - 0.173982).abs() < 1e-6);
    }

    #[test]
    fn rate_tends_to_one_at_the_boundary() {
        // at λ = ½: 3λ+λ² = 1.75 and 1.75² + 2 = 2.25², so ρ = ¼·(1.75 + 2.25) = 1
        let t: f64 = 1.75;
        assert_eq!((t * t + 2.0).sqrt(), 2.25);
        let rho = b_lambda_rate(0.5 - 1e-12).unwrap();
        assert!((rho - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hosvd_start_of_rank_one_is_exact() {
        let q = RankOneRep::new(vec![vec![0.6, 0.8], vec![3.0, 0.0, 4.0], vec![1.0, -1.0]]).unwrap();
        let s = hosvd_start(&q.evaluate()).unwrap();
        for m in 0..3 {
            let t = crate::diagnostics::component_tan_angle(s.factor(m), q.factor(m)).unwrap();
            assert!(t < 1e-12);
        }
    }

    #[test]
    fn fd_check_is_small() {
        let b = mohlenkamp();
        let p = RankOneRep::new(vec![vec![0.3, -0.8], vec![1.1, 0.2], vec![-0.5, 0.9]]).unwrap();
        assert!(finite_diff_gradient_check(&p, &b, 1e-6).unwrap() < 1e-6);
        // F is quadratic along every coordinate, so central differences only
        // carry rounding error, whatever the step
        for h in [1e-3, 1e-4, 1e-5] {
            assert!(finite_diff_gradient_check(&p, &b, h).unwrap() < 1e-10);
        }
    }
}
