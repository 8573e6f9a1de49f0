//! Canned experiments behind `rankone reproduce`.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::als::{solve_quiet, solve_with_reference, Solution, SolverConfig};
use crate::diagnostics::{estimate_rate, ratios_above, RateEstimate, Reference, DEFAULT_TAIL_WINDOW};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::generators::{
    gen_b_lambda, gen_initial_tau, gen_mohlenkamp, gen_ordering_example, gen_synthetic_order4, BLambda,
};
use crate::oracles::random_start;
use crate::report;
use crate::tensor::{cp_to_dense, tucker_to_dense, DenseTensor};

pub const FIGURES: [&str; 7] = [
    "fig-tan",
    "fig-q1",
    "fig-q2",
    "fig-blambda-02",
    "fig-blambda-05",
    "ordering-demo",
    "fig-order4",
];

pub const TAU_LOWER: [f64; 3] = [0.4, 0.495, 0.4999];
pub const TAU_UPPER: [f64; 3] = [0.5001, 0.505, 0.6];

pub const B_LAMBDA_N: usize = 4;
pub const B_LAMBDA_SEED: u64 = 2024;
pub const B_LAMBDA_INIT_SEED: u64 = 7;
/// Tangents below this are rounding noise for the b_λ runs.
pub const B_LAMBDA_FLOOR: f64 = 1e-12;
pub const B_LAMBDA_SUBLINEAR_SWEEPS: usize = 20_000;
pub const B_LAMBDA_LINEAR_WINDOW: usize = 5;
/// The superlinear Mohlenkamp runs reach the noise floor within a handful of sweeps.
pub const SUPERLINEAR_WINDOW: usize = 3;
pub const ORDER4_WINDOW: usize = 5;

pub const ORDERING_PARAMS: (f64, f64, f64) = (0.9, 2.0, 0.72);

pub const ORDER4_SEED: u64 = 4;
pub const ORDER4_DIMS: [usize; 4] = [4, 4, 4, 4];
pub const ORDER4_RANKS: [usize; 4] = [2, 2, 2, 2];
pub const ORDER4_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plotted {
    Tangent,
    Ratio,
}

#[derive(Debug, Clone)]
pub struct FigureRun {
    pub label: String,
    pub solution: Solution,
    /// Factor tangents of mode 1 against the reference, one per sweep.
    pub tangents: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Upper bound on the tail window used for the rate estimate.
    pub tail_window: usize,
}

impl FigureRun {
    pub fn from_solution(label: String, solution: Solution, floor: f64, tail_window: usize) -> Self {
        let tangents = solution.trace.component_tangents(0);
        let ratios = ratios_above(&tangents, floor);
        FigureRun {
            label,
            solution,
            tangents,
            ratios,
            tail_window,
        }
    }

    /// Rate estimate over the last `min(tail_window, len)` ratios.
    pub fn rate(&self) -> Result<RateEstimate> {
        estimate_rate(&self.ratios, self.tail_window.min(self.ratios.len()).max(1))
    }
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub id: String,
    pub title: String,
    pub plotted: Plotted,
    pub runs: Vec<FigureRun>,
    pub notes: Vec<String>,
}

impl Figure {
    pub fn labels(&self) -> Vec<String> {
        self.runs.iter().map(|r| r.label.clone()).collect()
    }

    fn columns(&self) -> Vec<Vec<f64>> {
        self.runs
            .iter()
            .map(|r| match self.plotted {
                Plotted::Tangent => r.tangents.clone(),
                Plotted::Ratio => r.ratios.clone(),
            })
            .collect()
    }

    pub fn series_csv(&self) -> String {
        report::series_csv(&self.labels(), &self.columns())
    }

    pub fn plot_script(&self, data_file: &str) -> String {
        let ylabel = match self.plotted {
            Plotted::Tangent => "tan angle to limit",
            Plotted::Ratio => "q ratio",
        };
        report::series_plot_script(&self.title, data_file, ylabel, &self.labels(), true)
    }

    /// Per-run summary followed by the figure notes.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "figure={}", self.id);
        for r in &self.runs {
            let _ = writeln!(out);
            let _ = writeln!(out, "run={}", r.label);
            let _ = writeln!(out, "termination={}", r.solution.termination);
            let _ = writeln!(out, "sweeps={}", r.solution.trace.sweeps());
            let _ = writeln!(out, "final_f={}", fmt_f64(r.solution.final_f()));
            match r.rate() {
                Ok(est) => out.push_str(&report::rate_report("1", &est)),
                Err(e) => out.push_str(&report::rate_report_unavailable("1", &e.to_string())),
            }
        }
        if !self.notes.is_empty() {
            let _ = writeln!(out);
        }
        for n in &self.notes {
            let _ = writeln!(out, "{n}");
        }
        out
    }
}

/// Mohlenkamp run from `v_0(τ)` with the 0-based CP term `term` as reference.
pub fn mohlenkamp_run(tau: f64, term: usize, config: &SolverConfig) -> Result<Solution> {
    let cp = gen_mohlenkamp();
    let b = cp_to_dense(&cp);
    let reference = Reference::from_cp_term(&cp, term)?;
    solve_with_reference(&b, &gen_initial_tau(tau, 3)?, config, Some(&reference))
}

/// b_λ run (d = 3) from a fixed random start with `⊗p` as reference.
pub fn b_lambda_run(lambda: f64, config: &SolverConfig) -> Result<(BLambda, Solution)> {
    let bl = gen_b_lambda(lambda, 3, B_LAMBDA_N, B_LAMBDA_SEED)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(B_LAMBDA_INIT_SEED);
    let init = random_start(bl.tensor.dims(), &mut rng)?;
    let reference = Reference::from_rank_one(&bl.p_power());
    let sol = solve_with_reference(&bl.tensor, &init, config, Some(&reference))?;
    Ok((bl, sol))
}

/// Runs until the tangent reaches the noise floor instead of stopping on `f`.
pub fn linear_config() -> SolverConfig {
    SolverConfig {
        max_sweeps: 500,
        tol_delta_f: None,
        tol_grad: Some(1e-13),
        ..SolverConfig::default()
    }
}

pub fn sublinear_config() -> SolverConfig {
    SolverConfig {
        max_sweeps: B_LAMBDA_SUBLINEAR_SWEEPS,
        tol_delta_f: None,
        tol_grad: None,
        ..SolverConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct OrderingOutcome {
    /// 0-based mode order.
    pub order: Vec<usize>,
    pub solution: Solution,
    /// 0-based CP term the limit is aligned with, if any.
    pub limit_term: Option<usize>,
    pub f_from_norm: f64,
}

/// Runs the ordering example under `(1,2,3)` and `(1,3,2)`, each measured
/// against its own limit.
pub fn ordering_runs() -> Result<(DenseTensor, Vec<OrderingOutcome>)> {
    let (lambda, a2, a3) = ORDERING_PARAMS;
    let (cp, init) = gen_ordering_example(lambda, a2, a3)?;
    let b = cp_to_dense(&cp);
    let mut out = Vec::new();
    for order in [vec![0, 1, 2], vec![0, 2, 1]] {
        let config = SolverConfig {
            mode_order: Some(order.clone()),
            ..SolverConfig::default()
        };
        // first pass locates the limit, second pass measures angles to it
        let limit = solve_quiet(&b, &init, &config)?;
        let reference = Reference::from_rank_one(&limit.rep);
        let solution = solve_with_reference(&b, &init, &config, Some(&reference))?;
        let v = solution.rep.evaluate();
        let limit_term = (0..cp.rank()).find(|&j| {
            let t = cp.term(j).evaluate();
            v.max_abs_diff(&t).map(|d| d <= 1e-8).unwrap_or(false)
        });
        let f_from_norm = -v.norm_sq() / (2.0 * b.norm_sq());
        out.push(OrderingOutcome {
            order,
            solution,
            limit_term,
            f_from_norm,
        });
    }
    Ok((b, out))
}

/// Synthetic order-4 Tucker run. The reference is the limit of a first,
/// uninstrumented pass from the same start.
pub fn order4_run() -> Result<(DenseTensor, Solution)> {
    let t = gen_synthetic_order4(ORDER4_SEED, &ORDER4_DIMS, &ORDER4_RANKS)?;
    let b = tucker_to_dense(&t);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(ORDER4_SEED);
    let init = random_start(b.dims(), &mut rng)?;
    let strict = SolverConfig {
        tol_delta_f: None,
        tol_grad: Some(1e-14),
        max_sweeps: 100_000,
        ..SolverConfig::default()
    };
    let limit = solve_quiet(&b, &init, &strict)?;
    let reference = Reference::from_rank_one(&limit.rep);
    let run_cfg = SolverConfig {
        tol_grad: Some(1e-12),
        tol_delta_f: None,
        ..SolverConfig::default()
    };
    let sol = solve_with_reference(&b, &init, &run_cfg, Some(&reference))?;
    Ok((b, sol))
}

fn tau_figure(id: &str, title: &str, taus: &[f64], term: usize, plotted: Plotted) -> Result<Figure> {
    let cfg = SolverConfig::default();
    let runs = taus
        .iter()
        .map(|&tau| {
            let sol = mohlenkamp_run(tau, term, &cfg)?;
            Ok(FigureRun::from_solution(format!("tau={tau}"), sol, f64::MIN_POSITIVE, SUPERLINEAR_WINDOW))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Figure {
        id: id.into(),
        title: title.into(),
        plotted,
        runs,
        notes: Vec::new(),
    })
}

fn b_lambda_figure(id: &str, lambda: f64, config: &SolverConfig, window: usize) -> Result<Figure> {
    let (_, sol) = b_lambda_run(lambda, config)?;
    let run = FigureRun::from_solution(format!("lambda={lambda}"), sol, B_LAMBDA_FLOOR, window);
    let mut notes = Vec::new();
    if let Ok(rho) = crate::oracles::b_lambda_rate(lambda) {
        notes.push(format!("predicted_rate={}", fmt_f64(rho)));
    }
    Ok(Figure {
        id: id.into(),
        title: format!("b_lambda, lambda = {lambda}"),
        plotted: Plotted::Tangent,
        runs: vec![run],
        notes,
    })
}

fn ordering_figure() -> Result<Figure> {
    let (_, outcomes) = ordering_runs()?;
    let mut notes = Vec::new();
    let mut runs = Vec::new();
    for o in outcomes {
        let order: Vec<String> = o.order.iter().map(|m| (m + 1).to_string()).collect();
        let order = order.join(",");
        let limit = o
            .limit_term
            .map(|j| format!("term {}", j + 1))
            .unwrap_or_else(|| "none".into());
        notes.push(format!(
            "order=({order}) limit={limit} f={} -norm_v^2/(2 norm_b^2)={}",
            fmt_f64(o.solution.final_f()),
            fmt_f64(o.f_from_norm)
        ));
        runs.push(FigureRun::from_solution(format!("order={order}"), o.solution, f64::MIN_POSITIVE, SUPERLINEAR_WINDOW));
    }
    Ok(Figure {
        id: "ordering-demo".into(),
        title: "mode order decides the limit".into(),
        plotted: Plotted::Tangent,
        runs,
        notes,
    })
}

fn order4_figure() -> Result<Figure> {
    let (_, sol) = order4_run()?;
    Ok(Figure {
        id: "fig-order4".into(),
        title: "synthetic order-4 Tucker tensor".into(),
        plotted: Plotted::Tangent,
        runs: vec![FigureRun::from_solution("order4".into(), sol, ORDER4_FLOOR, ORDER4_WINDOW)],
        notes: vec![format!(
            "seed={ORDER4_SEED} dims={ORDER4_DIMS:?} ranks={ORDER4_RANKS:?}"
        )],
    })
}

pub fn reproduce(id: &str) -> Result<Figure> {
    match id {
        "fig-tan" => tau_figure("fig-tan", "tangents to e2 x e2 x e2", &TAU_LOWER, 1, Plotted::Tangent),
        "fig-q1" => tau_figure("fig-q1", "q ratios, reference term 1", &TAU_UPPER, 0, Plotted::Ratio),
        "fig-q2" => tau_figure("fig-q2", "q ratios, reference term 2", &TAU_LOWER, 1, Plotted::Ratio),
        "fig-blambda-02" => b_lambda_figure(id, 0.2, &linear_config(), B_LAMBDA_LINEAR_WINDOW),
        "fig-blambda-05" => b_lambda_figure(id, 0.5, &sublinear_config(), DEFAULT_TAIL_WINDOW),
        "ordering-demo" => ordering_figure(),
        "fig-order4" => order4_figure(),
        other => Err(Error::UnknownFigure(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::RateClass;

    #[test]
    fn unknown_figure() {
        assert_eq!(reproduce("fig-99").unwrap_err(), Error::UnknownFigure("fig-99".into()));
    }

    #[test]
    fn q1_ratios_fall() {
        let fig = reproduce("fig-q1").unwrap();
        for r in &fig.runs {
            assert!(r.ratios.windows(2).all(|w| w[1] < w[0]), "{}: {:?}", r.label, r.ratios);
            assert!(*r.ratios.last().unwrap() < 1e-3);
        }
    }

    #[test]
    fn blambda_02_rate() {
        let fig = reproduce("fig-blambda-02").unwrap();
        let est = fig.runs[0].rate().unwrap();
        assert!((est.q_limsup - 0.173982).abs() < 0.01, "{est:?}");
        assert!(matches!(est.classification, RateClass::QLinear(_)));
    }

    #[test]
    fn ordering_limits_differ() {
        let (_, o) = ordering_runs().unwrap();
        assert_eq!(o[0].limit_term, Some(0));
        assert_eq!(o[1].limit_term, Some(1));
    }

    #[test]
    fn order4_linear_or_better() {
        let fig = reproduce("fig-order4").unwrap();
        let est = fig.runs[0].rate().unwrap();
        assert!(!matches!(est.classification, RateClass::Sublinear), "{est:?}");
    }
}
