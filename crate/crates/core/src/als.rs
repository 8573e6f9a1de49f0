//! Rank-one ALS with micro-step granularity.
//!
//! A micro step replaces one factor by the least-squares solution with all
//! other factors fixed. Instrumented steps also evaluate the descent identity,
//! the projection identity and reference-angle metrics using dense tensors, so
//! they cost a few passes over `b` each.

use std::fmt;

use crate::diagnostics::{self, Reference, SweepTrace};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::tensor::{
    self, contract_except, contraction_matrix_at, objective_f, DenseTensor, RankOneRep,
    TuckerTensor,
};

/// Updated factors below this norm are reported as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-150;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_sweeps: usize,
    /// Stop once the max-mode gradient norm is at most this value.
    pub tol_grad: Option<f64>,
    /// Stop once a sweep lowers `f` by at most this fraction of `|f|`.
    pub tol_delta_f: Option<f64>,
    /// 0-based mode permutation; identity when `None`.
    pub mode_order: Option<Vec<usize>>,
    /// Equalise factor norms after every sweep (product preserved).
    pub rebalance: bool,
    /// Keep micro-step records of every `trace_every`-th sweep only.
    pub trace_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_sweeps: 100_000,
            tol_grad: Some(1e-10),
            tol_delta_f: Some(1e-15),
            mode_order: None,
            rebalance: false,
            trace_every: 1,
        }
    }
}

impl SolverConfig {
    /// Validates the configuration for an order-`d` tensor and returns the mode order.
    pub fn resolve_order(&self, d: usize) -> Result<Vec<usize>> {
        if self.max_sweeps == 0 {
            return Err(Error::InvalidConfig("max_sweeps must be positive".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidConfig("trace_every must be positive".into()));
        }
        for (name, tol) in [("tol_grad", self.tol_grad), ("tol_delta_f", self.tol_delta_f)] {
            if let Some(t) = tol {
                if !(t > 0.0) {
                    return Err(Error::InvalidConfig(format!("{name} must be positive")));
                }
            }
        }
        let order = self.mode_order.clone().unwrap_or_else(|| (0..d).collect());
        let mut seen = vec![false; d];
        if order.len() != d || order.iter().any(|&m| m >= d || std::mem::replace(&mut seen[m], true)) {
            return Err(Error::InvalidConfig(format!(
                "mode order {:?} is not a permutation of 1..={d}",
                order.iter().map(|m| m + 1).collect::<Vec<_>>()
            )));
        }
        Ok(order)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    FunctionStall,
    GradientTolerance,
    MaxSweeps,
}

impl TerminationReason {
    pub fn converged(self) -> bool {
        self != TerminationReason::MaxSweeps
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminationReason::FunctionStall => "function-stall",
            TerminationReason::GradientTolerance => "gradient-tolerance",
            TerminationReason::MaxSweeps => "max-sweeps",
        })
    }
}

/// Everything measured around one micro step. Modes are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroStepRecord {
    pub k: usize,
    pub mu: usize,
    /// `f` of the dense iterate before and after the step.
    pub f_before: f64,
    pub f_after: f64,
    /// `½⟨Π r, r⟩ / ‖b‖²` with `r = b − v` before the step.
    pub descent_predicted: f64,
    /// `|f_before − f_after − descent_predicted|`.
    pub identity_residual: f64,
    /// `|f + ‖v‖²/(2‖b‖²)|` after the step.
    pub value_identity_residual: f64,
    /// `‖v_after − v_before − Π r‖_max`.
    pub projection_residual: f64,
    pub norm_v_before: f64,
    pub norm_v: f64,
    pub factor_norm_before: f64,
    pub factor_norm: f64,
    /// `⟨v, b⟩² / (‖v‖²‖b‖²)` before and after.
    pub cos2_before: f64,
    pub cos2_after: f64,
    pub grad_norm: f64,
    /// `‖v_after − v_before‖`.
    pub step_norm: f64,
    pub tan_angle_ref: Option<f64>,
    pub q_ratio_ref: Option<f64>,
    /// Tangent between the new factor and the reference factor of this mode.
    pub component_tan: Option<f64>,
    pub q_s: Option<f64>,
    pub q_c: Option<f64>,
    pub factor_after: Vec<f64>,
}

/// The ALS iterate together with cached factor norms and objective value.
#[derive(Debug, Clone)]
pub struct SweepState {
    iterate: RankOneRep,
    order: Vec<usize>,
    sweep: usize,
    cursor: usize,
    norms_sq: Vec<f64>,
    f: f64,
    b_norm_sq: f64,
    last_updated: Option<usize>,
}

impl SweepState {
    pub fn new(b: &DenseTensor, init: RankOneRep, order: Vec<usize>) -> Result<Self> {
        let b_norm_sq = b.norm_sq();
        if b_norm_sq == 0.0 {
            return Err(Error::ZeroTarget);
        }
        if b.dims() != init.dims().as_slice() {
            return Err(Error::DimMismatch(format!(
                "target dims {:?} vs initial guess dims {:?}",
                b.dims(),
                init.dims()
            )));
        }
        let norms_sq = init.norms_sq();
        let prod: f64 = norms_sq.iter().product();
        if prod == 0.0 || !prod.is_finite() {
            return Err(Error::ZeroInitial);
        }
        let f = (0.5 * prod - tensor::inner_rank_one(b, &init)?) / b_norm_sq;
        Ok(SweepState {
            iterate: init,
            order,
            sweep: 1,
            cursor: 0,
            norms_sq,
            f,
            b_norm_sq,
            last_updated: None,
        })
    }

    pub fn iterate(&self) -> &RankOneRep {
        &self.iterate
    }

    pub fn sweep(&self) -> usize {
        self.sweep
    }

    /// Mode that the next call to [`SweepState::step`] updates.
    pub fn next_mode(&self) -> usize {
        self.order[self.cursor]
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn norms_sq(&self) -> &[f64] {
        &self.norms_sq
    }

    pub fn last_updated(&self) -> Option<usize> {
        self.last_updated
    }

    /// Mode preceding `mu` in the cyclic sweep order.
    pub fn predecessor(&self, mu: usize) -> usize {
        let d = self.order.len();
        let pos = self.order.iter().position(|&m| m == mu).expect("mode in order");
        self.order[(pos + d - 1) % d]
    }

    fn gram_excluding(&self, mu: usize) -> f64 {
        self.norms_sq
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != mu)
            .map(|(_, n)| n)
            .product()
    }

    fn check_mode(&self, mu: usize) -> Result<()> {
        if mu >= self.order.len() {
            return Err(Error::DimMismatch(format!(
                "mode {} out of range for order {}",
                mu + 1,
                self.order.len()
            )));
        }
        Ok(())
    }

    /// Computes and commits the new factor of `mu`.
    fn update(&mut self, b: &DenseTensor, mu: usize) -> Result<()> {
        self.check_mode(mu)?;
        let c = contract_except(b, self.iterate.factors(), mu);
        let g = self.gram_excluding(mu);
        let new = linalg::scaled(&c, 1.0 / g);
        let n2 = linalg::norm_sq(&new);
        if !(n2.sqrt() >= DEGENERATE_NORM) {
            return Err(Error::DegenerateIterate {
                sweep: self.sweep,
                mode: mu + 1,
                norm: n2.sqrt(),
            });
        }
        self.f = (0.5 * g * n2 - linalg::dot(&c, &new)) / self.b_norm_sq;
        self.iterate.set_factor(mu, new);
        self.norms_sq[mu] = n2;
        self.last_updated = Some(mu);
        Ok(())
    }

    /// One instrumented micro step on mode `mu`.
    pub fn micro_step(
        &mut self,
        b: &DenseTensor,
        mu: usize,
        reference: Option<&Reference>,
    ) -> Result<MicroStepRecord> {
        self.check_mode(mu)?;
        let bb = self.b_norm_sq;
        let v_before = self.iterate.evaluate();
        let f_before = objective_f(&v_before, b)?;
        let r = b.sub(&v_before)?;
        let pr = self.projection_apply(mu, &r)?;
        let descent_predicted = 0.5 * tensor::inner(&pr, &r)? / bb;
        let factor_norm_before = self.norms_sq[mu].sqrt();
        let b_dot_before = tensor::inner(&v_before, b)?;

        self.update(b, mu)?;

        let v_after = self.iterate.evaluate();
        let f_after = objective_f(&v_after, b)?;
        let nv_before = v_before.norm_sq();
        let nv_after = v_after.norm_sq();
        let predicted_v = v_before.add_scaled(&pr, 1.0)?;
        let b_dot_after = tensor::inner(&v_after, b)?;
        let step = v_after.sub(&v_before)?;

        let mut rec = MicroStepRecord {
            k: self.sweep,
            mu,
            f_before,
            f_after,
            descent_predicted,
            identity_residual: (f_before - f_after - descent_predicted).abs(),
            value_identity_residual: (f_after + nv_after / (2.0 * bb)).abs(),
            projection_residual: v_after.max_abs_diff(&predicted_v)?,
            norm_v_before: nv_before.sqrt(),
            norm_v: nv_after.sqrt(),
            factor_norm_before,
            factor_norm: self.norms_sq[mu].sqrt(),
            cos2_before: b_dot_before * b_dot_before / (nv_before * bb),
            cos2_after: b_dot_after * b_dot_after / (nv_after * bb),
            grad_norm: tensor::gradient_norm(&self.iterate, b)?,
            step_norm: step.norm(),
            tan_angle_ref: None,
            q_ratio_ref: None,
            component_tan: None,
            q_s: None,
            q_c: None,
            factor_after: self.iterate.factor(mu).to_vec(),
        };
        if let Some(reference) = reference {
            let t0 = diagnostics::tan_angle_tensor(&v_before, &reference.tensor).ok();
            let t1 = diagnostics::tan_angle_tensor(&v_after, &reference.tensor).ok();
            rec.tan_angle_ref = t1;
            if let (Some(t0), Some(t1)) = (t0, t1) {
                if t0 > 0.0 {
                    rec.q_ratio_ref = Some(t1 / t0);
                }
            }
            if let Ok((qs, qc)) = diagnostics::q_components(&v_before, &v_after, &reference.tensor) {
                rec.q_s = Some(qs);
                rec.q_c = Some(qc);
            }
            if let Some(factors) = &reference.factors {
                rec.component_tan =
                    diagnostics::component_tan_angle(&rec.factor_after, &factors[mu]).ok();
            }
        }
        Ok(rec)
    }

    /// Instrumented micro step on the next mode of the sweep order.
    pub fn step(&mut self, b: &DenseTensor, reference: Option<&Reference>) -> Result<MicroStepRecord> {
        let mu = self.next_mode();
        let rec = self.micro_step(b, mu, reference)?;
        self.advance();
        Ok(rec)
    }

    fn advance(&mut self) {
        self.cursor += 1;
        if self.cursor == self.order.len() {
            self.cursor = 0;
            self.sweep += 1;
        }
    }

    /// Uninstrumented step (update only).
    pub fn quiet_step(&mut self, b: &DenseTensor) -> Result<()> {
        let mu = self.next_mode();
        self.update(b, mu)?;
        self.advance();
        Ok(())
    }

    /// The iteration matrix `M Mᵀ / (G_μ G_pred)` of the Gram route for mode `mu`.
    pub fn gram_iteration_matrix(&self, b: &DenseTensor, mu: usize) -> Result<Matrix> {
        self.check_mode(mu)?;
        let pred = self.predecessor(mu);
        if self.last_updated != Some(pred) {
            return Err(Error::NoPredecessor);
        }
        let m = contraction_matrix_at(b, &self.iterate, pred, mu)?;
        let denom = self.gram_excluding(mu) * self.gram_excluding(pred);
        Ok(m.matmul(&m.transpose()).scale(1.0 / denom))
    }

    /// The update of mode `mu` computed through the Gram route, without committing it.
    pub fn gram_micro_step(&self, b: &DenseTensor, mu: usize) -> Result<Vec<f64>> {
        let a = self.gram_iteration_matrix(b, mu)?;
        let new = a.matvec(self.iterate.factor(mu));
        let norm = linalg::norm(&new);
        if !(norm >= DEGENERATE_NORM) {
            return Err(Error::DegenerateIterate {
                sweep: self.sweep,
                mode: mu + 1,
                norm,
            });
        }
        Ok(new)
    }

    /// Applies `Π = ⊗_{ν≠μ} p̂_ν p̂_νᵀ ⊗ Id` (identity in slot `mu`) to `t`.
    pub fn projection_apply(&self, mu: usize, t: &DenseTensor) -> Result<DenseTensor> {
        project(&self.iterate, mu, t)
    }

    /// Rescales the factors to equal norms; `U(p)` and `f` are unchanged.
    pub fn rebalance(&mut self) {
        self.iterate = self.iterate.rebalanced();
        self.norms_sq = self.iterate.norms_sq();
    }
}

/// Orthogonal projection onto `{p̂_1 ⊗ ⋯ ⊗ x ⊗ ⋯ ⊗ p̂_d : x}` with `x` in slot `mu`.
pub fn project(p: &RankOneRep, mu: usize, t: &DenseTensor) -> Result<DenseTensor> {
    if t.dims() != p.dims().as_slice() {
        return Err(Error::DimMismatch(format!(
            "{:?} vs {:?}",
            t.dims(),
            p.dims()
        )));
    }
    let mut unit = Vec::with_capacity(p.order());
    for (m, f) in p.factors().iter().enumerate() {
        unit.push(linalg::normalized(f).ok_or(Error::DegenerateFactor { mode: m })?);
    }
    let w = contract_except(t, &unit, mu);
    unit[mu] = w;
    if linalg::norm_sq(&unit[mu]) == 0.0 {
        return DenseTensor::zeros(t.dims().to_vec());
    }
    Ok(RankOneRep::new(unit)?.evaluate())
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub rep: RankOneRep,
    pub trace: SweepTrace,
    pub termination: TerminationReason,
}

impl Solution {
    pub fn final_f(&self) -> f64 {
        self.trace.final_f()
    }
}

pub fn solve(b: &DenseTensor, init: &RankOneRep, config: &SolverConfig) -> Result<Solution> {
    solve_with_reference(b, init, config, None)
}

/// Algorithm loop with full instrumentation.
///
/// After every sweep the stopping tests run in this order: relative `f`
/// decrease, gradient norm, sweep budget.
pub fn solve_with_reference(
    b: &DenseTensor,
    init: &RankOneRep,
    config: &SolverConfig,
    reference: Option<&Reference>,
) -> Result<Solution> {
    let order = config.resolve_order(b.order())?;
    if let Some(r) = reference {
        if r.tensor.dims() != b.dims() {
            return Err(Error::DimMismatch("reference tensor vs target".into()));
        }
    }
    let mut state = SweepState::new(b, init.clone(), order.clone())?;
    let mut trace = SweepTrace {
        init: init.clone(),
        mode_order: order.clone(),
        b_norm_sq: b.norm_sq(),
        f_init: state.f(),
        records: Vec::new(),
        sweep_f: Vec::new(),
        sweep_step_norms: Vec::new(),
        sweep_grad: Vec::new(),
        trace_every: config.trace_every,
    };
    let mut termination = TerminationReason::MaxSweeps;
    for k in 1..=config.max_sweeps {
        let f_start = state.f();
        let v_start = state.iterate().evaluate();
        let keep = (k - 1) % config.trace_every == 0;
        let mut grad = 0.0;
        for _ in 0..order.len() {
            let rec = state.step(b, reference)?;
            grad = rec.grad_norm;
            if keep {
                trace.records.push(rec);
            }
        }
        if config.rebalance {
            state.rebalance();
        }
        let f_end = state.f();
        trace.sweep_f.push(f_end);
        trace
            .sweep_step_norms
            .push(state.iterate().evaluate().sub(&v_start)?.norm());
        trace.sweep_grad.push(grad);
        if let Some(reason) = stop_reason(config, f_start, f_end, grad) {
            termination = reason;
            break;
        }
    }
    Ok(Solution {
        rep: state.iterate().clone(),
        trace,
        termination,
    })
}

fn stop_reason(config: &SolverConfig, f_start: f64, f_end: f64, grad: f64) -> Option<TerminationReason> {
    if let Some(tol) = config.tol_delta_f {
        if f_start - f_end <= tol * f_end.abs() {
            return Some(TerminationReason::FunctionStall);
        }
    }
    if let Some(tol) = config.tol_grad {
        if grad <= tol {
            return Some(TerminationReason::GradientTolerance);
        }
    }
    None
}

/// Result of an uninstrumented run.
#[derive(Debug, Clone)]
pub struct QuietSolution {
    pub rep: RankOneRep,
    pub f: f64,
    pub sweeps: usize,
    pub grad_norm: f64,
    pub termination: TerminationReason,
}

/// Same iteration and stopping rules as [`solve`], without per-step records.
pub fn solve_quiet(b: &DenseTensor, init: &RankOneRep, config: &SolverConfig) -> Result<QuietSolution> {
    let order = config.resolve_order(b.order())?;
    let mut state = SweepState::new(b, init.clone(), order.clone())?;
    let mut termination = TerminationReason::MaxSweeps;
    let mut grad = f64::NAN;
    let mut sweeps = 0;
    for _ in 0..config.max_sweeps {
        let f_start = state.f();
        for _ in 0..order.len() {
            state.quiet_step(b)?;
        }
        if config.rebalance {
            state.rebalance();
        }
        sweeps += 1;
        grad = tensor::gradient_norm(state.iterate(), b)?;
        if let Some(reason) = stop_reason(config, f_start, state.f(), grad) {
            termination = reason;
            break;
        }
    }
    Ok(QuietSolution {
        rep: state.iterate().clone(),
        f: state.f(),
        sweeps,
        grad_norm: grad,
        termination,
    })
}

/// `Γ` of shape `t_ν × t_μ` for a Tucker target, so that the contraction
/// matrix is `B_μ Γᵀ B_νᵀ`.
pub fn tucker_gamma(t: &TuckerTensor, p: &RankOneRep, nu: usize, mu: usize) -> Result<Matrix> {
    let d = t.order();
    if nu == mu || nu >= d || mu >= d {
        return Err(Error::DimMismatch(format!(
            "need two distinct modes below {d}, got {nu} and {mu}"
        )));
    }
    if p.dims() != t.dims() {
        return Err(Error::DimMismatch("Tucker tensor vs representation".into()));
    }
    let projected: Vec<Vec<f64>> = t
        .factors()
        .iter()
        .zip(p.factors())
        .map(|(bm, x)| bm.tr_matvec(x))
        .collect();
    let vecs: Vec<Option<&[f64]>> = (0..d)
        .map(|m| (m != nu && m != mu).then(|| projected[m].as_slice()))
        .collect();
    let (kept, vals) = tensor::contract_modes(t.core().dims(), t.core().values(), &vecs);
    let g = Matrix::from_row_major(kept[0], kept[1], vals)?;
    Ok(if nu < mu { g } else { g.transpose() })
}

/// `B_μ Γᵀ B_νᵀ`, the contraction matrix assembled from the Tucker format.
pub fn tucker_contraction_matrix(
    t: &TuckerTensor,
    p: &RankOneRep,
    nu: usize,
    mu: usize,
) -> Result<Matrix> {
    let g = tucker_gamma(t, p, nu, mu)?;
    Ok(t.factors()[mu]
        .matmul(&g.transpose())
        .matmul(&t.factors()[nu].transpose()))
}
