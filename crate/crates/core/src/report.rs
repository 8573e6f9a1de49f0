//! Text outputs: trace CSV, rate report blocks, gnuplot scripts, oracle report.

use std::fmt::Write as _;

use crate::diagnostics::{RateEstimate, SweepTrace, STEADY_BAND, SUBLINEAR_LIMSUP, SUPERLINEAR_FINAL};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::oracles::{MultistartResult, StartKind};

pub const TRACE_HEADER: [&str; 10] = [
    "k",
    "mu",
    "f",
    "norm_v",
    "delta_f",
    "identity_residual",
    "grad_norm",
    "factor_norm_mu",
    "tan_angle_ref",
    "q_ratio_ref",
];

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("csv output: {e}"))
}

/// One row per recorded micro step; `k` and `mu` are 1-based.
pub fn trace_csv(trace: &SweepTrace) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in &trace.records {
        w.write_record([
            r.k.to_string(),
            (r.mu + 1).to_string(),
            fmt_f64(r.f_after),
            fmt_f64(r.norm_v),
            fmt_f64(r.f_before - r.f_after),
            fmt_f64(r.identity_residual),
            fmt_f64(r.grad_norm),
            fmt_f64(r.factor_norm),
            opt(r.tan_angle_ref),
            opt(r.q_ratio_ref),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(csv_err)?;
    String::from_utf8(bytes).map_err(csv_err)
}

/// Flat `key=value` block. `mode` is a label such as `1` or `tensor`.
pub fn rate_report(mode: &str, est: &RateEstimate) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mode={mode}");
    let _ = writeln!(out, "q_limsup={}", fmt_f64(est.q_limsup));
    let _ = writeln!(out, "classification={}", est.classification);
    let _ = writeln!(out, "rho_hat={}", opt(est.rho_hat()));
    let _ = writeln!(out, "tail_window={}", est.tail_window);
    let _ = writeln!(out, "steady={}", est.steady);
    let tail: Vec<String> = est.tail.iter().map(|&x| fmt_f64(x)).collect();
    let _ = writeln!(out, "tail={}", tail.join(","));
    let _ = writeln!(
        out,
        "thresholds=superlinear_final<{SUPERLINEAR_FINAL},sublinear_limsup>={SUBLINEAR_LIMSUP},steady_band={STEADY_BAND}"
    );
    out
}

/// Block emitted when no estimate could be formed.
pub fn rate_report_unavailable(mode: &str, reason: &str) -> String {
    format!("mode={mode}\nq_limsup=\nclassification=unavailable\nrho_hat=\ntail_window=0\nreason={reason}\n")
}

/// Wide CSV `k,<label>,…` with empty cells past the end of a series.
pub fn series_csv(labels: &[String], series: &[Vec<f64>]) -> String {
    let mut out = String::from("k");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    let rows = series.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..rows {
        let _ = write!(out, "{}", k + 1);
        for s in series {
            out.push(',');
            if let Some(&x) = s.get(k) {
                out.push_str(&fmt_f64(x));
            }
        }
        out.push('\n');
    }
    out
}

/// gnuplot script drawing every column of a [`series_csv`] file.
pub fn series_plot_script(title: &str, data_file: &str, ylabel: &str, labels: &[String], logscale: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "set datafile separator ','");
    let _ = writeln!(out, "set title '{title}'");
    let _ = writeln!(out, "set xlabel 'sweep k'");
    let _ = writeln!(out, "set ylabel '{ylabel}'");
    if logscale {
        let _ = writeln!(out, "set logscale y");
        let _ = writeln!(out, "set format y '10^{{%L}}'");
    }
    let _ = writeln!(out, "set key outside right");
    let plots: Vec<String> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("'{data_file}' every ::1 using 1:{} with linespoints title '{l}'", i + 2))
        .collect();
    let _ = writeln!(out, "plot {}", plots.join(", \\\n     "));
    out
}

/// gnuplot script plotting the tangent column of a trace CSV against the micro-step index.
pub fn trace_plot_script(title: &str, trace_file: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "set datafile separator ','");
    let _ = writeln!(out, "set title '{title}'");
    let _ = writeln!(out, "set xlabel 'micro step'");
    let _ = writeln!(out, "set ylabel 'tan angle to reference'");
    let _ = writeln!(out, "set logscale y");
    let _ = writeln!(out, "set format y '10^{{%L}}'");
    let _ = writeln!(
        out,
        "plot '{trace_file}' every ::1 using 0:9 with linespoints title 'tan_angle_ref'"
    );
    out
}

pub fn oracle_report(r: &MultistartResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "f_star={}", fmt_f64(r.f_star));
    let vals: Vec<String> = r.local_values.iter().map(|&x| fmt_f64(x)).collect();
    let _ = writeln!(out, "local_values={}", vals.join(","));
    for c in &r.clusters {
        let _ = writeln!(
            out,
            "cluster id={} f={} norm_v={} members={} global={}",
            c.id,
            fmt_f64(c.f),
            fmt_f64(c.norm_v),
            c.members,
            c.global
        );
    }
    for o in &r.outcomes {
        let label = match o.kind {
            StartKind::Random { seed } => format!("seed={seed}"),
            StartKind::Hosvd => "seed=hosvd".to_string(),
        };
        match &o.result {
            Ok(s) => {
                let _ = writeln!(
                    out,
                    "start {label} f={} residual={} sweeps={} cluster={}",
                    fmt_f64(s.solution.f),
                    fmt_f64(s.residual),
                    s.solution.sweeps,
                    s.cluster
                );
            }
            Err(e) => {
                let _ = writeln!(out, "start {label} error={e}");
            }
        }
    }
    out
}
