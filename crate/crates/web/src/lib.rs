//! Browser bindings for the `www/` demo page.
//!
//! Every export returns flat `f64` arrays or strings so the same functions
//! are callable (and tested) natively.

use fblgp::controller::robustness_from_sliding;
use fblgp::gp::{GpConfig, GpModel, Hyperparams, LengthscaleMode};
use fblgp::simulator::{run_case, CaseId, SimConfig};
use wasm_bindgen::prelude::*;

/// Columns of each row returned by [`simulate`].
pub const SIM_COLUMNS: [&str; 8] = ["t", "x1", "x1_ref", "e1", "u_total", "u_gp", "d_true", "w_err"];

#[wasm_bindgen]
pub fn simulation_columns() -> String {
    SIM_COLUMNS.join(",")
}

/// Runs one case and returns every `stride`-th row flattened in
/// [`SIM_COLUMNS`] order, followed by the three stage errors (%) and the
/// overall error (%).
#[wasm_bindgen]
pub fn simulate(case: &str, gamma_w: f64, gain: f64, m: f64, seed: u32, stride: usize) -> Result<Vec<f64>, String> {
    let case: CaseId = case.parse().map_err(|e: fblgp::Error| e.to_string())?;
    let mut cfg = SimConfig { gamma_w, ..Default::default() };
    cfg.controller.gains = vec![gain, gain];
    cfg.controller.m = m;
    cfg.controller.validate().map_err(|e| e.to_string())?;
    if !(gamma_w > 0.0) {
        return Err("gamma_w must be > 0".into());
    }
    let (trace, metrics) = run_case(&cfg.scenario(case), &cfg, seed as u64).map_err(|e| e.to_string())?;
    let stride = stride.max(1);
    let mut out = Vec::with_capacity(trace.rows.len() / stride * SIM_COLUMNS.len() + 4);
    for r in trace.rows.iter().step_by(stride) {
        let w_err = r.w.iter().zip(&trace.ideal_weights).fold(0.0f64, |a, (w, s)| a.max((w - s).abs()));
        out.extend([r.t, r.x[0], r.x_ref[0], r.e[0], r.control.u_total, r.control.u_gp, r.d_true, w_err]);
    }
    out.extend(metrics.stage_pct.iter().map(|s| s.unwrap_or(f64::NAN)));
    out.push(metrics.overall_pct);
    Ok(out)
}

/// Fits a one-dimensional GP to `(xs, ys)` and returns `[x, mean, std]`
/// triples on `n` grid points over `[lo, hi]`, then the fitted
/// `σ_f, l, σ_n`. With `fit = false` the default hyperparameters are used.
#[wasm_bindgen]
pub fn gp_posterior(xs: Vec<f64>, ys: Vec<f64>, lo: f64, hi: f64, n: usize, fit: bool) -> Result<Vec<f64>, String> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err("need matching, non-empty xs and ys".into());
    }
    let config = GpConfig { window: xs.len(), lengthscale_mode: LengthscaleMode::Shared, ..Default::default() };
    let mut gp = GpModel::with_hyper(config, Hyperparams::new(1.0, 1.0, 0.1));
    for (x, y) in xs.iter().zip(&ys) {
        gp.observe(vec![*x], *y);
    }
    if fit {
        gp.fit(0).map_err(|e| e.to_string())?;
    } else {
        gp.rebuild().map_err(|e| e.to_string())?;
    }
    let n = n.max(2);
    let mut out = Vec::with_capacity(3 * n + 3);
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let (mean, var) = gp.predict(&[x]).map_err(|e| e.to_string())?;
        out.extend([x, mean, var.sqrt()]);
    }
    let h = gp.hyper();
    out.extend([h.sigma_f, h.lengthscales[0], h.sigma_n]);
    Ok(out)
}

/// `u_rob` as a function of the sliding variable on `n` points over
/// `[−span, span]`, as `[s, u_rob]` pairs.
#[wasm_bindgen]
pub fn robustness_curve(m: f64, rho: f64, span: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .flat_map(|i| {
            let s = -span + 2.0 * span * i as f64 / (n - 1) as f64;
            [s, robustness_from_sliding(s, m, rho.max(1e-12))]
        })
        .collect()
}
