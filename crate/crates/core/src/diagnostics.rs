//! Convergence instrumentation: tangent metrics, the coefficient split,
//! q-ratio series, rate classification, dominance and basin analysis for
//! orthogonally decomposable targets, and the descent audit.

use std::fmt;

use crate::als::MicroStepRecord;
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{CpTensor, DenseTensor, RankOneRep};

/// Reference point for angle tracking. `factors` is present when the
/// reference is rank one, which enables per-mode tangents.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub tensor: DenseTensor,
    pub factors: Option<Vec<Vec<f64>>>,
}

impl Reference {
    pub fn from_rank_one(p: &RankOneRep) -> Self {
        Reference {
            tensor: p.evaluate(),
            factors: Some(p.factors().to_vec()),
        }
    }

    /// Term `j` (0-based) of a CP tensor.
    pub fn from_cp_term(cp: &CpTensor, j: usize) -> Result<Self> {
        if j >= cp.rank() {
            return Err(Error::OutOfRange(format!(
                "term {} requested from a rank-{} CP tensor",
                j + 1,
                cp.rank()
            )));
        }
        Ok(Reference::from_rank_one(&cp.term(j)))
    }

    /// Wraps an arbitrary tensor. Factors are recovered from the fibres
    /// through the largest entry when the tensor is rank one to within
    /// `1e-12` relative.
    pub fn from_tensor(t: DenseTensor) -> Result<Self> {
        if t.norm_sq() == 0.0 {
            return Err(Error::ZeroCoefficient("reference tensor is zero".into()));
        }
        let factors = rank_one_factors(&t);
        Ok(Reference { tensor: t, factors })
    }
}

fn rank_one_factors(t: &DenseTensor) -> Option<Vec<Vec<f64>>> {
    let dims = t.dims().to_vec();
    let (pos, &peak) = t
        .values()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
    let mut idx = vec![0; dims.len()];
    let mut rem = pos;
    for m in (0..dims.len()).rev() {
        idx[m] = rem % dims[m];
        rem /= dims[m];
    }
    let mut factors = Vec::with_capacity(dims.len());
    for m in 0..dims.len() {
        let mut probe = idx.clone();
        let fibre: Vec<f64> = (0..dims[m])
            .map(|i| {
                probe[m] = i;
                t.get(&probe)
            })
            .collect();
        factors.push(fibre);
    }
    // peak^(d-1) overcounts; fold the correction into the first factor
    let scale = peak.powi(1 - dims.len() as i32);
    factors[0] = linalg::scaled(&factors[0], scale);
    let rep = RankOneRep::new(factors).ok()?;
    let diff = rep.evaluate().max_abs_diff(t).ok()?;
    (diff <= 1e-12 * peak.abs()).then(|| rep.into_factors())
}

/// `(c, s)` with `c = ⟨v, r̂⟩` and `s = ‖v − c r̂‖`, `r̂ = r/‖r‖`.
pub fn split_vec(v: &[f64], r: &[f64]) -> Result<(f64, f64)> {
    if v.len() != r.len() {
        return Err(Error::DimMismatch(format!(
            "vector of length {} vs reference of length {}",
            v.len(),
            r.len()
        )));
    }
    let rn = linalg::norm(r);
    if rn == 0.0 {
        return Err(Error::ZeroCoefficient("reference has zero norm".into()));
    }
    let c = linalg::dot(v, r) / rn;
    let s = v
        .iter()
        .zip(r)
        .map(|(x, y)| {
            let e = x - c * y / rn;
            e * e
        })
        .sum::<f64>()
        .sqrt();
    Ok((c, s))
}

fn tan_from_split(c: f64, s: f64) -> Result<f64> {
    if c == 0.0 {
        return Err(Error::OrthogonalToReference);
    }
    Ok(s / c.abs())
}

/// Coefficient of `v` along the reference and the norm of its orthogonal part.
pub fn coefficient_split(v: &DenseTensor, reference: &DenseTensor) -> Result<(f64, f64)> {
    if v.dims() != reference.dims() {
        return Err(Error::DimMismatch(format!(
            "{:?} vs {:?}",
            v.dims(),
            reference.dims()
        )));
    }
    split_vec(v.values(), reference.values())
}

/// `tan ∠[ref, v]`, invariant under nonzero scaling of either argument.
pub fn tan_angle_tensor(v: &DenseTensor, reference: &DenseTensor) -> Result<f64> {
    let (c, s) = coefficient_split(v, reference)?;
    tan_from_split(c, s)
}

/// Tangent of the angle between two vectors of one mode space.
pub fn component_tan_angle(p: &[f64], reference: &[f64]) -> Result<f64> {
    let (c, s) = split_vec(p, reference)?;
    tan_from_split(c, s)
}

/// `(q_s, q_c)` for one step, so that `tan(after) = (q_s / q_c) · tan(before)`.
pub fn q_components(
    before: &DenseTensor,
    after: &DenseTensor,
    reference: &DenseTensor,
) -> Result<(f64, f64)> {
    let (c0, s0) = coefficient_split(before, reference)?;
    let (c1, s1) = coefficient_split(after, reference)?;
    if c0 == 0.0 {
        return Err(Error::OrthogonalToReference);
    }
    if s0 == 0.0 {
        return Err(Error::ZeroCoefficient(
            "orthogonal part vanishes before the step".into(),
        ));
    }
    Ok((s1 / s0, c1.abs() / c0.abs()))
}

/// Everything recorded about one ALS run.
#[derive(Debug, Clone)]
pub struct SweepTrace {
    pub init: RankOneRep,
    /// Mode order (0-based) used for every sweep.
    pub mode_order: Vec<usize>,
    pub b_norm_sq: f64,
    /// `f` of the initial guess.
    pub f_init: f64,
    pub records: Vec<MicroStepRecord>,
    /// `f(v_{k+1})` after each completed sweep.
    pub sweep_f: Vec<f64>,
    /// `‖v_{k+1} − v_k‖` per sweep.
    pub sweep_step_norms: Vec<f64>,
    /// Max-mode gradient norm after each sweep.
    pub sweep_grad: Vec<f64>,
    /// Every stored record belongs to a sweep `k` with `(k − 1) % trace_every == 0`.
    pub trace_every: usize,
}

impl SweepTrace {
    pub fn sweeps(&self) -> usize {
        self.sweep_f.len()
    }

    pub fn final_f(&self) -> f64 {
        self.sweep_f.last().copied().unwrap_or(self.f_init)
    }

    /// Per-mode factor tangents in sweep order (needs a rank-one reference).
    pub fn component_tangents(&self, mode: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.mu == mode)
            .filter_map(|r| r.component_tan)
            .collect()
    }
}

/// Ratios of consecutive factor tangents of `mode`, one per sweep pair.
/// Stops at the first tangent that is zero or subnormal.
pub fn q_ratio_series(trace: &SweepTrace, mode: usize) -> Vec<f64> {
    q_ratio_series_above(trace, mode, f64::MIN_POSITIVE)
}

/// As [`q_ratio_series`] but stops once a tangent drops to `floor` or below,
/// which keeps rounding noise out of the tail.
pub fn q_ratio_series_above(trace: &SweepTrace, mode: usize, floor: f64) -> Vec<f64> {
    ratios_above(&trace.component_tangents(mode), floor)
}

pub fn ratios_above(tangents: &[f64], floor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for w in tangents.windows(2) {
        if !(w[0] > floor && w[1] > floor) || !w[1].is_finite() {
            break;
        }
        out.push(w[1] / w[0]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateClass {
    QSuperlinear,
    QLinear(f64),
    Sublinear,
}

impl fmt::Display for RateClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateClass::QSuperlinear => write!(f, "Q-superlinear"),
            RateClass::QLinear(_) => write!(f, "Q-linear"),
            RateClass::Sublinear => write!(f, "sublinear"),
        }
    }
}

pub const SUPERLINEAR_FINAL: f64 = 0.05;
pub const SUBLINEAR_LIMSUP: f64 = 0.98;
pub const STEADY_BAND: f64 = 0.10;
pub const DEFAULT_TAIL_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub q_limsup: f64,
    pub classification: RateClass,
    pub tail_window: usize,
    pub tail: Vec<f64>,
    /// Whether the tail stays within the ±10% band around its mean.
    pub steady: bool,
}

impl RateEstimate {
    pub fn rho_hat(&self) -> Option<f64> {
        match self.classification {
            RateClass::QLinear(r) => Some(r),
            _ => None,
        }
    }
}

/// Classifies the final `tail_window` entries of a ratio series.
///
/// Superlinear: strictly decreasing with last value below 0.05.
/// Sublinear: tail maximum at least 0.98.
/// Linear otherwise, with `ρ̂` the tail mean when the tail sits within ±10%
/// of it and the tail maximum when it does not.
pub fn estimate_rate(series: &[f64], tail_window: usize) -> Result<RateEstimate> {
    if tail_window == 0 || series.len() < tail_window {
        return Err(Error::InsufficientTrace {
            needed: tail_window.max(1),
            found: series.len(),
        });
    }
    let tail = series[series.len() - tail_window..].to_vec();
    let q_limsup = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let last = *tail.last().expect("non-empty");
    let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let steady = tail.iter().all(|&q| (q - mean).abs() <= STEADY_BAND * mean.abs());
    let classification = if decreasing && last < SUPERLINEAR_FINAL {
        RateClass::QSuperlinear
    } else if q_limsup >= SUBLINEAR_LIMSUP {
        RateClass::Sublinear
    } else if steady {
        RateClass::QLinear(mean)
    } else {
        RateClass::QLinear(q_limsup)
    };
    Ok(RateEstimate {
        q_limsup,
        classification,
        tail_window,
        tail,
        steady,
    })
}

fn require_orthogonal_order3(cp: &CpTensor) -> Result<()> {
    if cp.order() < 3 {
        return Err(Error::OrderTooSmall(cp.order()));
    }
    if !cp.is_orthonormal() {
        return Err(Error::InvalidConfig(
            "dominance analysis needs orthonormal factor matrices".into(),
        ));
    }
    Ok(())
}

/// Whether term `j_star` (0-based) dominates at `p`.
pub fn dominance_check(cp: &CpTensor, p: &RankOneRep, j_star: usize) -> Result<bool> {
    require_orthogonal_order3(cp)?;
    if p.dims() != cp.dims() {
        return Err(Error::DimMismatch("CP tensor vs representation".into()));
    }
    if j_star >= cp.rank() {
        return Err(Error::OutOfRange(format!("term index {j_star}")));
    }
    let exp = 2.0 / (cp.order() as f64 - 2.0);
    let score = |j: usize, m: usize| {
        let c = linalg::dot(&cp.column(j, m), p.factor(m));
        cp.weights()[j].powf(exp) * c * c
    };
    Ok((0..cp.order()).all(|m| {
        let top = score(j_star, m);
        (0..cp.rank()).filter(|&j| j != j_star).all(|j| top > score(j, m))
    }))
}

/// Bound on the factor-tangent ratio of a micro step on `mode` whose
/// predecessor in the sweep was `pred`.
pub fn superlinear_bound_for(
    cp: &CpTensor,
    p: &RankOneRep,
    j_star: usize,
    mode: usize,
    pred: usize,
) -> Result<f64> {
    if !dominance_check(cp, p, j_star)? {
        return Err(Error::NoDominance);
    }
    let d = cp.order();
    if mode >= d || pred >= d || mode == pred {
        return Err(Error::OutOfRange(format!("modes {mode} and {pred}")));
    }
    let weight = |j: usize| {
        let prod: f64 = (0..d)
            .filter(|&m| m != mode && m != pred)
            .map(|m| linalg::dot(&cp.column(j, m), p.factor(m)))
            .product();
        let w = cp.weights()[j] * prod;
        w * w
    };
    let top = weight(j_star);
    let worst = (0..cp.rank())
        .filter(|&j| j != j_star)
        .map(weight)
        .fold(0.0, f64::max);
    Ok(worst / top)
}

/// Bound for the first mode with the last mode as predecessor.
pub fn superlinear_bound(cp: &CpTensor, p: &RankOneRep, j_star: usize) -> Result<f64> {
    superlinear_bound_for(cp, p, j_star, 0, cp.order() - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessReport {
    pub max_deviation: f64,
    pub checked_steps: usize,
}

/// Replays a full trace of a two-term orthogonal CP run and compares each
/// measured factor-tangent ratio with the bound evaluated just before the
/// step. Steps without dominance or with a vanishing tangent are skipped, as
/// is the very first micro step (its predecessor was never updated).
pub fn check_sharpness_r2(cp: &CpTensor, trace: &SweepTrace, j_star: usize) -> Result<SharpnessReport> {
    if cp.rank() != 2 {
        return Err(Error::InvalidConfig(format!(
            "sharpness holds for two terms, got {}",
            cp.rank()
        )));
    }
    if trace.trace_every != 1 {
        return Err(Error::InvalidConfig(
            "sharpness replay needs every micro step recorded".into(),
        ));
    }
    let order = &trace.mode_order;
    let d = order.len();
    let mut current = trace.init.clone();
    let mut max_deviation: f64 = 0.0;
    let mut checked_steps = 0;
    for (i, rec) in trace.records.iter().enumerate() {
        let mu = rec.mu;
        let pos = order.iter().position(|&m| m == mu).expect("mode in order");
        let pred = order[(pos + d - 1) % d];
        if i > 0 && dominance_check(cp, &current, j_star)? {
            let target = cp.column(j_star, mu);
            let before = component_tan_angle(current.factor(mu), &target)?;
            if before > f64::MIN_POSITIVE {
                let after = component_tan_angle(&rec.factor_after, &target)?;
                let bound = superlinear_bound_for(cp, &current, j_star, mu, pred)?;
                max_deviation = max_deviation.max((after / before - bound).abs());
                checked_steps += 1;
            }
        }
        let mut factors = current.into_factors();
        factors[mu] = rec.factor_after.clone();
        current = RankOneRep::new(factors)?;
    }
    Ok(SharpnessReport {
        max_deviation,
        checked_steps,
    })
}

/// `tan φ* = (λ1/λ2)^{1/(d−2)}`.
pub fn basin_tangent(lambda1: f64, lambda2: f64, d: usize) -> Result<f64> {
    if d < 3 {
        return Err(Error::OrderTooSmall(d));
    }
    if !(lambda1 >= lambda2 && lambda2 > 0.0) {
        return Err(Error::OutOfRange(format!(
            "need λ1 ≥ λ2 > 0, got {lambda1}, {lambda2}"
        )));
    }
    Ok((lambda1 / lambda2).powf(1.0 / (d as f64 - 2.0)))
}

/// Angular radius of the attraction region of the dominant term.
pub fn basin_angle(lambda1: f64, lambda2: f64, d: usize) -> Result<f64> {
    Ok(basin_tangent(lambda1, lambda2, d)?.atan())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub micro_steps: usize,
    pub sweeps: usize,
    pub final_step_norm: f64,
    pub final_grad_norm: f64,
    pub max_identity_residual: f64,
}

/// Checks monotone descent, the per-sweep step bound
/// `‖v_{k+1} − v_k‖² ≤ 2d‖b‖²(f_k − f_{k+1})`, and that the last sweep
/// moved the iterate by at most `step_tol`.
pub fn descent_audit(trace: &SweepTrace, step_tol: f64) -> Result<AuditReport> {
    let slack = |f: f64| 1e-14 * f.abs().max(1.0);
    for (index, r) in trace.records.iter().enumerate() {
        if r.f_after > r.f_before + slack(r.f_before) {
            return Err(Error::AuditFailure {
                index,
                reason: format!("f increased from {} to {}", r.f_before, r.f_after),
            });
        }
    }
    let d = trace.mode_order.len() as f64;
    let mut f_prev = trace.f_init;
    for (k, (&f, &step)) in trace.sweep_f.iter().zip(&trace.sweep_step_norms).enumerate() {
        let drop = f_prev - f;
        let allowed = 2.0 * d * trace.b_norm_sq * drop.max(0.0);
        if step * step > allowed + 1e-12 * trace.b_norm_sq {
            return Err(Error::AuditFailure {
                index: k,
                reason: format!(
                    "sweep {}: step² {} exceeds 2d‖b‖²Δf = {}",
                    k + 1,
                    step * step,
                    allowed
                ),
            });
        }
        if f > f_prev + slack(f_prev) {
            return Err(Error::AuditFailure {
                index: k,
                reason: format!("sweep {}: f increased from {f_prev} to {f}", k + 1),
            });
        }
        f_prev = f;
    }
    let final_step_norm = trace.sweep_step_norms.last().copied().unwrap_or(0.0);
    if final_step_norm > step_tol {
        return Err(Error::AuditFailure {
            index: trace.sweep_step_norms.len().saturating_sub(1),
            reason: format!("final step norm {final_step_norm:e} above {step_tol:e}"),
        });
    }
    Ok(AuditReport {
        micro_steps: trace.records.len(),
        sweeps: trace.sweeps(),
        final_step_norm,
        final_grad_norm: trace.sweep_grad.last().copied().unwrap_or(f64::NAN),
        max_identity_residual: trace
            .records
            .iter()
            .map(|r| r.identity_residual)
            .fold(0.0, f64::max),
    })
}
