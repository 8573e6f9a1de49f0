use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;

use rankone::als::{solve_quiet, solve_with_reference, Solution};
use rankone::diagnostics::{
    estimate_rate, q_ratio_series_above, ratios_above, RateEstimate, Reference, SweepTrace,
};
use rankone::experiments::{self, FIGURES};
use rankone::format::{fmt_f64, write_dense, write_point, write_tensor};
use rankone::oracles::{
    best_rank_one_multistart, finite_diff_gradient_check, global_min_identity_residual, singular_certificate,
    stationarity_residual, MultistartConfig, STATIONARY_TOL,
};
use rankone::report;
use rankone::{RankOneRep, SolverConfig, TerminationReason};

use crate::config::{
    build_init, build_reference, check_output, load_target, write_file, Common, Target,
};
use crate::error::{usage, CliResult};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
    Budget,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Failed => 1,
            Status::Budget => 2,
        }
    }

    fn of(t: TerminationReason) -> Self {
        if t.converged() {
            Status::Ok
        } else {
            Status::Budget
        }
    }
}

/// Rate blocks for every mode when the reference has factors, otherwise one
/// block from the per-sweep tensor tangents.
fn rate_blocks(
    trace: &SweepTrace,
    reference: Option<&Reference>,
    window: usize,
    floor: f64,
) -> (Vec<String>, Option<RateEstimate>) {
    let estimate = |series: &[f64]| estimate_rate(series, window.min(series.len()).max(1));
    let Some(reference) = reference else {
        return (vec![report::rate_report_unavailable("tensor", "no reference")], None);
    };
    let mut blocks = Vec::new();
    let mut first = None;
    if reference.factors.is_some() {
        for mode in 0..trace.mode_order.len() {
            let label = (mode + 1).to_string();
            match estimate(&q_ratio_series_above(trace, mode, floor)) {
                Ok(est) => {
                    blocks.push(report::rate_report(&label, &est));
                    first.get_or_insert(est);
                }
                Err(e) => blocks.push(report::rate_report_unavailable(&label, &e.to_string())),
            }
        }
    } else {
        let mut per_sweep: Vec<f64> = Vec::new();
        let mut last_k = None;
        for r in &trace.records {
            if let Some(t) = r.tan_angle_ref {
                if last_k == Some(r.k) {
                    *per_sweep.last_mut().expect("pushed for this sweep") = t;
                } else {
                    per_sweep.push(t);
                }
                last_k = Some(r.k);
            }
        }
        match estimate(&ratios_above(&per_sweep, floor)) {
            Ok(est) => {
                blocks.push(report::rate_report("tensor", &est));
                first = Some(est);
            }
            Err(e) => blocks.push(report::rate_report_unavailable("tensor", &e.to_string())),
        }
    }
    (blocks, first)
}

/// `term J` when the limit coincides with a known term of the target.
fn limit_label(target: &Target, sol_rep: &RankOneRep, termination: TerminationReason) -> String {
    if !termination.converged() {
        return "not-converged".into();
    }
    let v = sol_rep.evaluate();
    let tol = 1e-6 * target.dense.norm();
    for (j, t) in target.terms.iter().enumerate() {
        if let Ok(diff) = v.sub(&t.evaluate()) {
            if diff.norm() <= tol {
                return format!("term {}", j + 1);
            }
        }
    }
    "other".into()
}

fn run_header(target: &Target, sol: &Solution) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "termination={}", sol.termination);
    let _ = writeln!(out, "sweeps={}", sol.trace.sweeps());
    let _ = writeln!(out, "final_f={}", fmt_f64(sol.final_f()));
    let _ = writeln!(
        out,
        "grad_norm={}",
        fmt_f64(sol.trace.sweep_grad.last().copied().unwrap_or(f64::NAN))
    );
    let _ = writeln!(out, "norm_v={}", fmt_f64(sol.rep.tensor_norm()));
    let _ = writeln!(out, "converged_to={}", limit_label(target, &sol.rep, sol.termination));
    out
}

pub fn run(c: Common) -> CliResult<Status> {
    let c = c.merged()?;
    if c.plot_out.is_some() && c.trace_out.is_none() {
        return Err(usage("--plot-out needs --trace-out"));
    }
    for p in [&c.trace_out, &c.report_out, &c.plot_out].into_iter().flatten() {
        check_output(p)?;
    }
    let target = load_target(&c)?;
    let init = build_init(c.init_source()?.as_ref(), &target, c.seed())?;
    let reference = build_reference(&c, &target)?;
    let cfg = c.solver_config()?;
    let sol = solve_with_reference(&target.dense, &init, &cfg, reference.as_ref())?;

    let (blocks, _) = rate_blocks(&sol.trace, reference.as_ref(), c.tail_window(), c.tan_floor());
    let mut text = run_header(&target, &sol);
    for b in &blocks {
        text.push('\n');
        text.push_str(b);
    }

    if let Some(path) = &c.trace_out {
        write_file(path, &report::trace_csv(&sol.trace)?)?;
        if let Some(plot) = c.plot_path() {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            write_file(&plot, &report::trace_plot_script("ALS run", &name))?;
        }
    }
    match &c.report_out {
        Some(path) => {
            write_file(path, &text)?;
            print!("{}", run_header(&target, &sol));
        }
        None => print!("{text}"),
    }
    Ok(Status::of(sol.termination))
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Grid over `tau`, `lambda` or `seed`, e.g. `tau=0.4,0.6`
    #[arg(long, value_name = "NAME=V1,V2,...")]
    pub grid: Option<String>,
    /// Directory for the per-point traces
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,
    /// Summary CSV; defaults to `<out-dir>/summary.csv`
    #[arg(long, value_name = "PATH")]
    pub summary_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GridParam {
    Tau,
    Lambda,
    Seed,
}

fn parse_grid(s: &str) -> CliResult<(GridParam, Vec<String>)> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| usage(format!("--grid expects NAME=V1,V2,..., got `{s}`")))?;
    let param = match name.trim() {
        "tau" => GridParam::Tau,
        "lambda" => GridParam::Lambda,
        "seed" => GridParam::Seed,
        other => return Err(usage(format!("cannot sweep over `{other}`; use tau, lambda or seed"))),
    };
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    Ok((param, values))
}

struct SweepRow {
    param: String,
    converged_to: String,
    final_f: String,
    q_limsup: String,
    classification: String,
    error: String,
    status: Status,
}

fn sweep_point(c: &Common, param: GridParam, value: &str, trace_path: &Path) -> CliResult<SweepRow> {
    let mut c = c.clone();
    match param {
        GridParam::Tau => {
            let t: f64 = value.parse().map_err(|_| usage(format!("cannot parse τ `{value}`")))?;
            c.init = None;
            c.init_tau = Some(t);
        }
        GridParam::Lambda => c.params.push(format!("lambda={value}")),
        GridParam::Seed => {
            c.seed = Some(value.parse().map_err(|_| usage(format!("cannot parse seed `{value}`")))?)
        }
    }
    let target = load_target(&c)?;
    let init = build_init(c.init_source()?.as_ref(), &target, c.seed())?;
    let cfg = c.solver_config()?;
    let reference = match build_reference(&c, &target)? {
        Some(r) => r,
        // measure against the run's own limit
        None => Reference::from_rank_one(&solve_quiet(&target.dense, &init, &cfg)?.rep),
    };
    let sol = solve_with_reference(&target.dense, &init, &cfg, Some(&reference))?;
    write_file(trace_path, &report::trace_csv(&sol.trace)?)?;
    let (_, est) = rate_blocks(&sol.trace, Some(&reference), c.tail_window(), c.tan_floor());
    Ok(SweepRow {
        param: String::new(),
        converged_to: limit_label(&target, &sol.rep, sol.termination),
        final_f: fmt_f64(sol.final_f()),
        q_limsup: est.as_ref().map(|e| fmt_f64(e.q_limsup)).unwrap_or_default(),
        classification: est.map(|e| e.classification.to_string()).unwrap_or_else(|| "unavailable".into()),
        error: String::new(),
        status: Status::of(sol.termination),
    })
}

fn file_stem_for(name: &str) -> String {
    name.chars()
        .map(|ch| if ch.is_ascii_alphanumeric() || ch == '.' || ch == '-' { ch } else { '_' })
        .collect()
}

pub fn sweep(args: SweepArgs) -> CliResult<Status> {
    let c = args.common.merged()?;
    let grid = args
        .grid
        .as_deref()
        .ok_or_else(|| usage("sweep needs --grid NAME=V1,V2,... (NAME is tau, lambda or seed)"))?;
    let (param, values) = parse_grid(grid)?;
    if values.is_empty() {
        return Err(usage("empty grid: give at least one value, e.g. --grid tau=0.4,0.6"));
    }
    let summary_path = args.summary_out.clone().unwrap_or_else(|| args.out_dir.join("summary.csv"));
    check_output(&summary_path)?;
    check_output(&args.out_dir.join("probe"))?;
    let pname = match param {
        GridParam::Tau => "tau",
        GridParam::Lambda => "lambda",
        GridParam::Seed => "seed",
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(c.jobs.unwrap_or(0))
        .build()
        .map_err(|e| usage(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        values
            .par_iter()
            .map(|v| {
                let label = format!("{pname}={v}");
                let trace_path = args.out_dir.join(format!("{}.csv", file_stem_for(&label)));
                let mut row = sweep_point(&c, param, v, &trace_path).unwrap_or_else(|e| SweepRow {
                    param: String::new(),
                    converged_to: String::new(),
                    final_f: String::new(),
                    q_limsup: String::new(),
                    classification: String::new(),
                    error: e.to_string(),
                    status: Status::Failed,
                });
                row.param = label;
                row
            })
            .collect()
    });

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["param", "converged_to", "final_f", "q_limsup", "classification", "error"])?;
    for r in &rows {
        w.write_record([&r.param, &r.converged_to, &r.final_f, &r.q_limsup, &r.classification, &r.error])?;
    }
    let bytes = w.into_inner().map_err(|e| usage(format!("csv: {e}")))?;
    let text = String::from_utf8(bytes).map_err(|e| usage(format!("csv: {e}")))?;
    write_file(&summary_path, &text)?;
    print!("{text}");

    Ok(if rows.iter().any(|r| r.status == Status::Failed) {
        Status::Failed
    } else if rows.iter().any(|r| r.status == Status::Budget) {
        Status::Budget
    } else {
        Status::Ok
    })
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Point to check (`cp d 1` file); solves from the configured start when absent
    #[arg(long, value_name = "PATH")]
    pub point: Option<PathBuf>,
    /// Also run the multistart oracle with this many random starts
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub oracle_starts: usize,
    /// Step of the finite-difference gradient check
    #[arg(long, value_name = "H", default_value_t = 1e-6)]
    pub fd_step: f64,
}

pub const FD_TOL: f64 = 1e-6;
pub const IDENTITY_TOL: f64 = 1e-10;

pub fn verify(args: VerifyArgs) -> CliResult<Status> {
    let c = args.common.merged()?;
    if let Some(p) = &c.report_out {
        check_output(p)?;
    }
    let target = load_target(&c)?;
    let b = &target.dense;
    let point = match &args.point {
        Some(path) => rankone::format::read_point_file(path)?,
        None => {
            let init = build_init(c.init_source()?.as_ref(), &target, c.seed())?;
            solve_quiet(b, &init, &c.solver_config()?)?.rep
        }
    };
    if point.dims() != b.dims() {
        return Err(usage(format!(
            "point has mode sizes {:?}, target has {:?}",
            point.dims(),
            b.dims()
        )));
    }

    let residual = stationarity_residual(&point, b)?;
    let threshold = STATIONARY_TOL * b.norm();
    println!("stationarity_residual={}", fmt_f64(residual));
    println!("stationarity_threshold={}", fmt_f64(threshold));
    if !(residual < threshold) {
        eprintln!("error: {}", rankone::Error::NotStationary(residual));
        return Ok(Status::Failed);
    }

    let d = point.order();
    let mut all_match = true;
    for nu in 0..d {
        for mu in 0..d {
            if nu == mu {
                continue;
            }
            let cert = singular_certificate(&point, b, nu, mu)?;
            all_match &= cert.matches_norm;
            println!(
                "pair=({},{}) sigma_max={} gap={} norm_v={} matches_norm={} is_singular_value={}",
                nu + 1,
                mu + 1,
                fmt_f64(cert.sigma_max),
                fmt_f64(cert.gap),
                fmt_f64(cert.norm_v),
                cert.matches_norm,
                cert.is_singular_value
            );
        }
    }
    let identity = global_min_identity_residual(&point, b)?;
    let fd = finite_diff_gradient_check(&point, b, args.fd_step)?;
    println!("global_min_identity_residual={}", fmt_f64(identity));
    println!("fd_gradient_deviation={}", fmt_f64(fd));

    let mut warning = !all_match;
    if args.oracle_starts > 0 {
        let cfg = MultistartConfig {
            n_starts: args.oracle_starts,
            seed: c.seed(),
            solver: SolverConfig {
                tol_delta_f: None,
                tol_grad: Some(1e-12),
                max_sweeps: 20_000,
                ..SolverConfig::default()
            },
            ..MultistartConfig::default()
        };
        let ms = best_rank_one_multistart(b, &cfg)?;
        let f = rankone::tensor::objective_f(&point.evaluate(), b)?;
        let global = f <= ms.f_star + cfg.f_tol;
        println!("oracle_f_star={}", fmt_f64(ms.f_star));
        println!("oracle_global={global}");
        warning |= !global;
        let text = report::oracle_report(&ms);
        match &c.report_out {
            Some(p) => write_file(p, &text)?,
            None => print!("{text}"),
        }
    }

    let pass = identity <= IDENTITY_TOL && fd <= FD_TOL;
    if warning {
        println!("warning=local-point");
    }
    println!("status={}", if pass { "ok" } else { "failed" });
    Ok(if pass { Status::Ok } else { Status::Failed })
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output tensor file
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Write the dense form even for structured generators
    #[arg(long)]
    pub dense: bool,
    /// Also write the initial guess as a point file
    #[arg(long, value_name = "PATH")]
    pub init_out: Option<PathBuf>,
}

pub fn generate(args: GenerateArgs) -> CliResult<Status> {
    let c = args.common.merged()?;
    check_output(&args.out)?;
    if let Some(p) = &args.init_out {
        check_output(p)?;
    }
    let target = load_target(&c)?;
    let text = match (&target.file, args.dense) {
        (Some(f), false) => write_tensor(f),
        _ => write_dense(&target.dense),
    };
    write_file(&args.out, &text)?;
    if let Some(p) = &args.init_out {
        let init = build_init(c.init_source()?.as_ref(), &target, c.seed())?;
        write_file(p, &write_point(&init))?;
    }
    Ok(Status::Ok)
}

#[derive(Args, Debug, Clone)]
pub struct ReproduceArgs {
    /// Figure id; see --list
    pub id: Option<String>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,
    /// Print the available figure ids
    #[arg(long)]
    pub list: bool,
}

pub fn reproduce(args: ReproduceArgs) -> CliResult<Status> {
    if args.list {
        for id in FIGURES {
            println!("{id}");
        }
        return Ok(Status::Ok);
    }
    let id = args
        .id
        .as_deref()
        .ok_or_else(|| usage(format!("reproduce needs a figure id: {}", FIGURES.join(", "))))?;
    let dir = &args.out_dir;
    check_output(&dir.join(format!("{id}.csv")))?;
    let fig = experiments::reproduce(id)?;
    let data_name = format!("{id}.csv");
    write_file(&dir.join(&data_name), &fig.series_csv())?;
    write_file(&dir.join(format!("{id}.gp")), &fig.plot_script(&data_name))?;
    for r in &fig.runs {
        let name = format!("{id}-{}.trace.csv", file_stem_for(&r.label));
        write_file(&dir.join(name), &report::trace_csv(&r.solution.trace)?)?;
    }
    let summary = fig.summary();
    write_file(&dir.join(format!("{id}.txt")), &summary)?;
    print!("{summary}");
    Ok(Status::Ok)
}
