//! wasm-bindgen exports for `www/index.html`. The plain functions are what
//! the exports wrap; they are also what the native tests call.

use wasm_bindgen::prelude::*;

use rankone::diagnostics::{basin_tangent, ratios_above};
use rankone::experiments::{b_lambda_run, mohlenkamp_run, B_LAMBDA_FLOOR};
use rankone::oracles::b_lambda_rate;
use rankone::SolverConfig;

/// Tangent of the first factor against the term the run converges to,
/// one value per sweep. `tau = 0.5` has no dominant term and is rejected.
pub fn tau_tangents(tau: f64) -> Result<(usize, Vec<f64>), String> {
    if !(tau >= 0.0 && tau <= 4.0) {
        return Err(format!("τ must lie in [0, 4], got {tau}"));
    }
    if tau == 0.5 {
        return Err("τ = 0.5 sits on the basin boundary".into());
    }
    let term = if tau > 0.5 { 0 } else { 1 };
    let sol = mohlenkamp_run(tau, term, &SolverConfig::default()).map_err(|e| e.to_string())?;
    Ok((term + 1, sol.trace.component_tangents(0)))
}

/// Per-sweep tangent ratios of a b_λ run against `⊗p`.
pub fn lambda_ratios(lambda: f64, max_sweeps: usize) -> Result<Vec<f64>, String> {
    if !(0.0..0.5).contains(&lambda) {
        return Err(format!("λ must lie in [0, 0.5), got {lambda}"));
    }
    let cfg = SolverConfig {
        max_sweeps: max_sweeps.clamp(1, 50_000),
        tol_delta_f: None,
        tol_grad: Some(1e-13),
        ..SolverConfig::default()
    };
    let (_, sol) = b_lambda_run(lambda, &cfg).map_err(|e| e.to_string())?;
    Ok(ratios_above(&sol.trace.component_tangents(0), B_LAMBDA_FLOOR))
}

/// `tan φ*` for `d = 3..=d_max`.
pub fn basin_curve(ratio: f64, d_max: usize) -> Result<Vec<f64>, String> {
    if !(ratio >= 1.0) {
        return Err(format!("λ1/λ2 must be at least 1, got {ratio}"));
    }
    (3..=d_max.max(3))
        .map(|d| basin_tangent(ratio, 1.0, d).map_err(|e| e.to_string()))
        .collect()
}

#[wasm_bindgen]
pub fn mohlenkamp_tangents(tau: f64) -> Result<Vec<f64>, JsError> {
    tau_tangents(tau).map(|(_, t)| t).map_err(|e| JsError::new(&e))
}

/// 1-based CP term the run from `v_0(τ)` converges to.
#[wasm_bindgen]
pub fn mohlenkamp_limit_term(tau: f64) -> Result<usize, JsError> {
    tau_tangents(tau).map(|(j, _)| j).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn b_lambda_ratios(lambda: f64, max_sweeps: usize) -> Result<Vec<f64>, JsError> {
    lambda_ratios(lambda, max_sweeps).map_err(|e| JsError::new(&e))
}

/// Predicted ratio for `λ < ½`, NaN otherwise.
#[wasm_bindgen]
pub fn b_lambda_predicted(lambda: f64) -> f64 {
    b_lambda_rate(lambda).unwrap_or(f64::NAN)
}

#[wasm_bindgen]
pub fn basin_tangents(ratio: f64, d_max: usize) -> Result<Vec<f64>, JsError> {
    basin_curve(ratio, d_max).map_err(|e| JsError::new(&e))
}
