//! Three-stage tracking scenario on the benchmark plant.
//!
//! * stage 1, `t < t₁`: no disturbance; concurrent learning records data and
//!   adapts the weights.
//! * stage 2, `t₁ ≤ t < t₂`: disturbance on, weights frozen, GP collects data.
//! * stage 3, `t ≥ t₂`: GP compensation on, refitted on a sliding window.
//!
//! Plant state and weight estimate are integrated together in one RK4 state.
//! Stage gates switch on step indices, so every integration step sees a
//! smooth right-hand side.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::concurrent_learning::LearnerState;
use crate::controller::{sliding_variable, AutoGain, ControlBreakdown, ControlLaw, ControllerConfig};
use crate::error::{Error, Result};
use crate::gp::{training_target, GpConfig, GpModel};
use crate::numerics::{try_rk4_step, Matrix};
use crate::plant::{dot, Plant, ReferenceModel, SineReference};

/// Seconds excluded at the start of each stage when averaging errors.
pub const TRANSIENT_EXCLUSION: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseId {
    A,
    B,
    C,
    D,
    E,
}

impl CaseId {
    pub const ALL: [CaseId; 5] = [CaseId::A, CaseId::B, CaseId::C, CaseId::D, CaseId::E];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseId::A => "a",
            CaseId::B => "b",
            CaseId::C => "c",
            CaseId::D => "d",
            CaseId::E => "e",
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(CaseId::A),
            "b" => Ok(CaseId::B),
            "c" => Ok(CaseId::C),
            "d" => Ok(CaseId::D),
            "e" => Ok(CaseId::E),
            other => Err(Error::out_of_range("cases", format!("unknown case `{other}`"))),
        }
    }
}

/// Initial weight estimate used by every case (and held fixed in a and d).
pub const MISMATCHED_WEIGHTS: [f64; 3] = [0.5, -1.3, 0.75];

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub case_id: CaseId,
    pub duration: f64,
    pub h: f64,
    /// Disturbance onset and end of concurrent learning.
    pub t1: f64,
    /// Start of GP compensation.
    pub t2: f64,
    pub w0: Vec<f64>,
    pub cl_enabled: bool,
    pub gp_enabled: bool,
    pub rob_enabled: bool,
    pub disturbance_enabled: bool,
}

impl Scenario {
    pub fn for_case(case_id: CaseId, h: f64) -> Self {
        let (cl, gp, rob, dist) = match case_id {
            CaseId::A => (false, false, false, false),
            CaseId::B => (true, false, false, false),
            CaseId::C => (true, false, false, true),
            CaseId::D => (false, true, true, true),
            CaseId::E => (true, true, true, true),
        };
        Self {
            case_id,
            duration: 30.0,
            h,
            t1: 10.0,
            t2: 20.0,
            w0: MISMATCHED_WEIGHTS.to_vec(),
            cl_enabled: cl,
            gp_enabled: gp,
            rob_enabled: rob,
            disturbance_enabled: dist,
        }
    }

    fn steps(&self, t: f64) -> usize {
        (t / self.h).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XdotEstimator {
    /// Feed back the exact `ẋ_n` of the plant.
    #[default]
    Exact,
    /// Backward difference of `x_n` over one step.
    FiniteDifference,
}

/// Everything except the per-case flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub plant: String,
    pub controller: ControllerConfig,
    pub gamma_w: f64,
    pub stack_capacity: usize,
    pub record_period: f64,
    pub gp: GpConfig,
    pub amplitude: f64,
    pub omega: f64,
    pub h: f64,
    pub xdot_estimator: XdotEstimator,
    /// Train the GP on `u − û` literally, i.e. with the opposite sign.
    pub paper_literal_gp_sign: bool,
    /// Replace the GP prediction by the exact compensation target.
    pub gp_oracle: bool,
    pub cl_enabled: Option<bool>,
    pub gp_enabled: Option<bool>,
    pub rob_enabled: Option<bool>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            plant: crate::plant::BENCHMARK_PLANT.to_string(),
            controller: ControllerConfig::default(),
            gamma_w: 3.0,
            stack_capacity: 30,
            record_period: 0.05,
            gp: GpConfig::default(),
            amplitude: 0.5,
            omega: 1.0,
            h: 1e-3,
            xdot_estimator: XdotEstimator::Exact,
            paper_literal_gp_sign: false,
            gp_oracle: false,
            cl_enabled: None,
            gp_enabled: None,
            rob_enabled: None,
        }
    }
}

impl SimConfig {
    /// Case defaults with any global flag overrides applied.
    pub fn scenario(&self, case_id: CaseId) -> Scenario {
        let mut s = Scenario::for_case(case_id, self.h);
        if let Some(v) = self.cl_enabled {
            s.cl_enabled = v;
        }
        if let Some(v) = self.gp_enabled {
            s.gp_enabled = v;
        }
        if let Some(v) = self.rob_enabled {
            s.rob_enabled = v;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub x_ref: Vec<f64>,
    pub e: Vec<f64>,
    pub control: ControlBreakdown,
    pub w: Vec<f64>,
    pub gp_mean: f64,
    pub gp_var: f64,
    pub d_true: f64,
    pub v: f64,
    pub vdot: f64,
    pub stage: u8,
    /// `ẋ_n` as fed back to the learner and the GP (not exported).
    pub xdot_n_measured: f64,
    /// Robustness gain in effect (not exported).
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub case_id: Option<CaseId>,
    pub order: usize,
    pub num_weights: usize,
    pub h: f64,
    pub t1: f64,
    pub t2: f64,
    pub ideal_weights: Vec<f64>,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// Row at the first step with `t ≥ time`.
    pub fn row_at(&self, time: f64) -> Option<&TraceRow> {
        let k = (time / self.h).round() as usize;
        self.rows.get(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub case_id: Option<CaseId>,
    /// Average tracking error (%) per stage, transient excluded.
    pub stage_pct: [Option<f64>; 3],
    pub overall_pct: f64,
    /// `‖w − w*‖∞` at the end of the run.
    pub final_weight_error: f64,
    /// `‖w − w*‖∞` at the end of stage 1.
    pub switch_weight_error: Option<f64>,
}

impl Metrics {
    pub fn stage(&self, stage: usize) -> Option<f64> {
        self.stage_pct.get(stage.wrapping_sub(1)).copied().flatten()
    }
}

fn inf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

/// `mean |e₁| / amplitude × 100` over rows with `start ≤ t ≤ end`.
pub fn mean_abs_error_pct<'a>(rows: impl IntoIterator<Item = &'a TraceRow>, amplitude: f64) -> Option<f64> {
    let (sum, count) = rows.into_iter().fold((0.0, 0usize), |(s, c), r| (s + r.e[0].abs(), c + 1));
    (count > 0).then(|| sum / count as f64 / amplitude * 100.0)
}

pub fn compute_metrics(trace: &Trace, ref_amplitude: f64) -> Metrics {
    let stage_start = [0.0, trace.t1, trace.t2];
    let in_window = |r: &TraceRow| {
        let start = stage_start[(r.stage - 1) as usize];
        r.t >= start + TRANSIENT_EXCLUSION - 0.5 * trace.h
    };
    let mut stage_pct = [None; 3];
    for (s, slot) in stage_pct.iter_mut().enumerate() {
        *slot = mean_abs_error_pct(
            trace.rows.iter().filter(|r| r.stage as usize == s + 1 && in_window(r)),
            ref_amplitude,
        );
    }
    let overall_pct = mean_abs_error_pct(trace.rows.iter().filter(|r| in_window(r)), ref_amplitude)
        .or_else(|| mean_abs_error_pct(&trace.rows, ref_amplitude))
        .unwrap_or(0.0);
    let final_weight_error =
        trace.rows.last().map(|r| inf_distance(&r.w, &trace.ideal_weights)).unwrap_or(f64::NAN);
    let switch_weight_error = trace
        .rows
        .iter()
        .find(|r| r.stage >= 2)
        .map(|r| inf_distance(&r.w, &trace.ideal_weights));
    Metrics { case_id: trace.case_id, stage_pct, overall_pct, final_weight_error, switch_weight_error }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSample {
    pub v: f64,
    pub vdot: f64,
    /// `m > |w̃ᵀφ − d + μ|`, the bracket measured as `|ẋ_n,measured − ẋ_n,predicted|`.
    pub condition_ok: bool,
    pub sliding: f64,
    pub mismatch: f64,
}

/// `ẋ_n,predicted − ẋ_n,measured` with `ẋ_n,predicted = wᵀφ + u + u_gp`.
/// Equals `w̃ᵀφ − d + μ` when the measurement is exact.
pub fn measured_bracket(row: &TraceRow, phi: &[f64]) -> f64 {
    dot(&row.w, phi) + row.control.u_total + row.control.u_gp - row.xdot_n_measured
}

/// `V = eᵀPe` and `V̇ = −eᵀS̃e + 2 bᵀPe (w̃ᵀφ − d + μ + u_rob)`.
pub fn lyapunov_monitor(row: &TraceRow, phi: &[f64], law: &ControlLaw, m: f64) -> Result<LyapunovSample> {
    let p = &law.p;
    let s_tilde = law.cfg.s_tilde()?;
    let v = quad_form(p, &row.e);
    let decay = quad_form(&s_tilde, &row.e);
    let sliding = sliding_variable(p, &row.e);
    let bracket = measured_bracket(row, phi);
    let vdot = -decay + 2.0 * sliding * (bracket + row.control.u_rob);
    Ok(LyapunovSample { v, vdot, condition_ok: m > bracket.abs(), sliding, mismatch: bracket.abs() })
}

fn quad_form(p: &Matrix, e: &[f64]) -> f64 {
    let n = e.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += e[i] * p[(i, j)] * e[j];
        }
    }
    acc
}

/// Runs one scenario to completion.
pub fn run_case(scn: &Scenario, cfg: &SimConfig, seed: u64) -> Result<(Trace, Metrics)> {
    if !(scn.h > 0.0) || !(scn.duration > 0.0) {
        return Err(Error::out_of_range("h", "step and duration must be positive"));
    }
    let plant = Plant::by_name(&cfg.plant)
        .ok_or_else(|| Error::out_of_range("plant", format!("unknown plant `{}`", cfg.plant)))?;
    let n = plant.order();
    let nw = plant.num_weights();
    if scn.w0.len() != nw {
        return Err(Error::Dimension(format!("{} initial weights for {nw} regressors", scn.w0.len())));
    }
    if cfg.controller.gains.len() != n {
        return Err(Error::Dimension(format!("{} gains for plant order {n}", cfg.controller.gains.len())));
    }
    let reference = SineReference::new(n, cfg.amplitude, cfg.omega);
    let law = ControlLaw::new(ControllerConfig {
        gp_enabled: scn.gp_enabled,
        rob_enabled: scn.rob_enabled,
        ..cfg.controller.clone()
    })?;
    let s_tilde = law.cfg.s_tilde()?;

    let h = scn.h;
    let total = scn.steps(scn.duration);
    let k1 = scn.steps(scn.t1);
    let k2 = scn.steps(scn.t2);
    let period = |p: f64| ((p / h).round() as usize).max(1);
    let record_every = period(cfg.record_period);
    let sample_every = period(cfg.gp.sample_period);
    let refit_every = period(cfg.gp.refit_period);

    let mut learner = LearnerState::new(scn.w0.clone(), cfg.gamma_w, cfg.stack_capacity);
    learner.active = scn.cl_enabled;
    let mut gp = GpModel::new(cfg.gp.clone());
    let mut auto_gain = AutoGain::default();
    let target_sign = if cfg.paper_literal_gp_sign { -1.0 } else { 1.0 };
    let w_star = plant.ideal_weights().to_vec();

    // Exact compensation target d − w̃ᵀφ, used only by the oracle mode.
    let oracle_target = |x: &[f64], w: &[f64], phi: &[f64], dist_on: bool| -> f64 {
        let d = if dist_on { plant.disturbance.shape(x) } else { 0.0 };
        let wt: f64 = w.iter().zip(&w_star).zip(phi).map(|((a, b), p)| (a - b) * p).sum();
        target_sign * (d - wt)
    };

    let mut z: Vec<f64> = vec![0.0; n];
    z.extend_from_slice(&scn.w0);
    let mut rows = Vec::with_capacity(total + 1);
    let mut refits = 0u64;
    let mut prev_xn: Option<f64> = None;

    for k in 0..=total {
        let t = k as f64 * h;
        let stage: u8 = if k < k1 {
            1
        } else if k < k2 {
            2
        } else {
            3
        };
        let dist_on = scn.disturbance_enabled && k >= k1 && plant.disturbance.is_active(t);
        let cl_active = scn.cl_enabled && k < k1;
        learner.active = cl_active;

        if scn.gp_enabled && !cfg.gp_oracle && k >= k2 && (k - k2) % refit_every == 0 && k < total {
            match gp.fit(seed.wrapping_add(refits)) {
                Ok(_) => {}
                Err(Error::AllStartsFailed) | Err(Error::NotPositiveDefinite { .. }) => {
                    if gp.snapshot().is_none() {
                        let _ = gp.rebuild();
                    }
                }
                Err(Error::Unfitted) => {}
                Err(e) => return Err(e),
            }
            refits += 1;
        }
        let compensate = scn.gp_enabled && k >= k2 && (cfg.gp_oracle || gp.snapshot().is_some());

        let (x, w) = z.split_at(n);
        plant.check_state(t, x)?;
        let phi = plant.eval_regressor(x)?;
        let (x_ref, xdot_ref) = reference.eval(t);
        let e: Vec<f64> = x_ref.iter().zip(x).map(|(r, xi)| r - xi).collect();
        let (gp_mean, gp_var) = if !compensate {
            (0.0, 0.0)
        } else if cfg.gp_oracle {
            (oracle_target(x, w, &phi, dist_on), 0.0)
        } else {
            gp.predict(x)?
        };
        let m = if cfg.controller.m_auto { auto_gain.gain() } else { cfg.controller.m };
        let control = law.compute(m, w, &phi, &e, xdot_ref, gp_mean);
        let d_true = if dist_on { plant.disturbance.shape(x) } else { 0.0 };
        let xdot_n = plant.last_derivative(&phi, control.u_total, d_true);
        let xdot_n_measured = match (cfg.xdot_estimator, prev_xn) {
            (XdotEstimator::FiniteDifference, Some(prev)) => (x[n - 1] - prev) / h,
            _ => xdot_n,
        };
        prev_xn = Some(x[n - 1]);

        let v = quad_form(&law.p, &e);
        let sliding = sliding_variable(&law.p, &e);
        let bracket = dot(w, &phi) + control.u_total + control.u_gp - xdot_n_measured;
        let vdot = -quad_form(&s_tilde, &e) + 2.0 * sliding * (bracket + control.u_rob);
        auto_gain.observe(bracket);

        if cl_active && k % record_every == 0 {
            learner.stack.try_record(&phi, xdot_n_measured, control.u_total);
        }
        if scn.gp_enabled && !cfg.gp_oracle && k >= k1 && k % sample_every == 0 {
            let y = target_sign * training_target(xdot_n_measured, w, &phi, control.u_total);
            gp.observe(x.to_vec(), y);
        }

        rows.push(TraceRow {
            t,
            x: x.to_vec(),
            x_ref,
            e,
            control,
            w: w.to_vec(),
            gp_mean,
            gp_var,
            d_true,
            v,
            vdot,
            stage,
            xdot_n_measured,
            m,
        });

        if k == total {
            break;
        }

        let snapshot = gp.snapshot();
        z = try_rk4_step(
            |tau, state| {
                let (x, w) = state.split_at(n);
                plant.check_state(tau, x)?;
                let phi = plant.eval_regressor(x)?;
                let (x_ref, xdot_ref) = reference.eval(tau);
                let e: Vec<f64> = x_ref.iter().zip(x).map(|(r, xi)| r - xi).collect();
                let gp_mean = match (compensate, cfg.gp_oracle, snapshot) {
                    (false, _, _) => 0.0,
                    (true, true, _) => oracle_target(x, w, &phi, dist_on),
                    (true, false, Some(s)) => s.predict(x).0,
                    (true, false, None) => 0.0,
                };
                let u = law.compute(m, w, &phi, &e, xdot_ref, gp_mean).u_total;
                let d = if dist_on { plant.disturbance.shape(x) } else { 0.0 };
                let mut dz = Vec::with_capacity(n + nw);
                dz.extend_from_slice(&x[1..]);
                dz.push(plant.last_derivative(&phi, u, d));
                dz.extend(learner.derivative_at(w, &phi, &e, &law.p));
                Ok(dz)
            },
            t,
            &z,
            h,
        )?;
    }

    let trace = Trace {
        case_id: Some(scn.case_id),
        order: n,
        num_weights: nw,
        h,
        t1: scn.t1,
        t2: scn.t2,
        ideal_weights: w_star,
        rows,
    };
    let metrics = compute_metrics(&trace, cfg.amplitude);
    Ok((trace, metrics))
}
