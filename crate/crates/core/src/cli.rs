//! Scenario configuration files, CSV traces and the metrics report.
//!
//! Configuration is a flat TOML document; every key is optional and unknown
//! keys are rejected. The report is line oriented: one record per line, a
//! record kind followed by `key=value` fields.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gp::LengthscaleMode;
use crate::simulator::{CaseId, Metrics, SimConfig, Trace, TraceRow, XdotEstimator};

pub const KNOWN_KEYS: &[&str] = &[
    "cases",
    "out",
    "seed",
    "h",
    "plant",
    "amplitude",
    "omega",
    "gains",
    "m",
    "rho",
    "Q",
    "R",
    "gp_enabled",
    "rob_enabled",
    "m_auto",
    "gamma_w",
    "stack_capacity",
    "record_period",
    "cl_enabled",
    "gp_window",
    "gp_sample_period",
    "gp_refit_period",
    "gp_starts",
    "gp_lengthscale_mode",
    "gp_sigma_n_floor",
    "gp_max_iter",
    "xdot_estimator",
    "paper_literal_gp_sign",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cases: Vec<CaseId>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Keys given explicitly in the document, as written.
    pub overrides: BTreeMap<String, toml::Value>,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cases: CaseId::ALL.to_vec(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            overrides: BTreeMap::new(),
            sim: SimConfig::default(),
        }
    }
}

fn type_error(key: &str, expected: &str, got: &toml::Value) -> Error {
    Error::Parse(format!("key `{key}`: expected {expected}, got {}", got.type_str()))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(type_error(key, "a number", other)),
    }
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| type_error(key, "a boolean", v))
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| type_error(key, "a string", v))
}

fn as_count(key: &str, v: &toml::Value) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        toml::Value::Integer(_) => Err(Error::out_of_range(key, "must be ≥ 0")),
        other => Err(type_error(key, "an integer", other)),
    }
}

fn as_vec(key: &str, v: &toml::Value) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| type_error(key, "an array of numbers", v))?;
    arr.iter().map(|x| as_f64(key, x)).collect()
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::out_of_range(key, format!("{v} must be finite and > 0")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::out_of_range(key, format!("{v} must be finite and ≥ 0")))
    }
}

pub fn parse_cases(s: &str) -> Result<Vec<CaseId>> {
    let mut cases: Vec<CaseId> = s.split(',').filter(|c| !c.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    cases.sort();
    cases.dedup();
    if cases.is_empty() {
        return Err(Error::out_of_range("cases", "at least one case is required"));
    }
    Ok(cases)
}

/// Parses a configuration document and fills defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    if let Some(k) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(Error::UnknownKey(k.clone()));
    }

    let mut rc = RunConfig::default();
    for (key, v) in &table {
        let sim = &mut rc.sim;
        match key.as_str() {
            "cases" => {
                rc.cases = match v {
                    toml::Value::String(s) => parse_cases(s)?,
                    toml::Value::Array(items) => {
                        let names: Vec<&str> = items.iter().map(|i| as_str(key, i)).collect::<Result<_>>()?;
                        parse_cases(&names.join(","))?
                    }
                    other => return Err(type_error(key, "a string or array of strings", other)),
                }
            }
            "out" => rc.out_dir = PathBuf::from(as_str(key, v)?),
            "seed" => rc.seed = as_count(key, v)? as u64,
            "h" => sim.h = positive(key, as_f64(key, v)?)?,
            "plant" => sim.plant = as_str(key, v)?.to_string(),
            "amplitude" => sim.amplitude = positive(key, as_f64(key, v)?)?,
            "omega" => sim.omega = positive(key, as_f64(key, v)?)?,
            "gains" => sim.controller.gains = as_vec(key, v)?,
            "m" => sim.controller.m = non_negative(key, as_f64(key, v)?)?,
            "rho" => sim.controller.rho = positive(key, as_f64(key, v)?)?,
            "Q" => {
                let rows = v.as_array().ok_or_else(|| type_error(key, "an array of rows", v))?;
                sim.controller.q = rows.iter().map(|r| as_vec(key, r)).collect::<Result<_>>()?;
            }
            "R" => sim.controller.r = non_negative(key, as_f64(key, v)?)?,
            "gp_enabled" => sim.gp_enabled = Some(as_bool(key, v)?),
            "rob_enabled" => sim.rob_enabled = Some(as_bool(key, v)?),
            "cl_enabled" => sim.cl_enabled = Some(as_bool(key, v)?),
            "m_auto" => sim.controller.m_auto = as_bool(key, v)?,
            "gamma_w" => sim.gamma_w = positive(key, as_f64(key, v)?)?,
            "stack_capacity" => sim.stack_capacity = as_count(key, v)?,
            "record_period" => sim.record_period = positive(key, as_f64(key, v)?)?,
            "gp_window" => sim.gp.window = as_count(key, v)?,
            "gp_sample_period" => sim.gp.sample_period = positive(key, as_f64(key, v)?)?,
            "gp_refit_period" => sim.gp.refit_period = positive(key, as_f64(key, v)?)?,
            "gp_starts" => sim.gp.starts = as_count(key, v)?,
            "gp_lengthscale_mode" => sim.gp.lengthscale_mode = as_str(key, v)?.parse::<LengthscaleMode>()?,
            "gp_sigma_n_floor" => sim.gp.sigma_n_floor = positive(key, as_f64(key, v)?)?,
            "gp_max_iter" => sim.gp.max_iter = as_count(key, v)?,
            "xdot_estimator" => {
                sim.xdot_estimator = match as_str(key, v)? {
                    "exact" => XdotEstimator::Exact,
                    "finite_difference" => XdotEstimator::FiniteDifference,
                    other => return Err(Error::out_of_range(key, format!("`{other}` is not exact|finite_difference"))),
                }
            }
            "paper_literal_gp_sign" => sim.paper_literal_gp_sign = as_bool(key, v)?,
            _ => unreachable!("key list checked above"),
        }
        rc.overrides.insert(key.clone(), v.clone());
    }
    validate(&rc)?;
    Ok(rc)
}

/// Cross-field checks shared by file and command-line configuration.
pub fn validate(rc: &RunConfig) -> Result<()> {
    if rc.cases.is_empty() {
        return Err(Error::out_of_range("cases", "at least one case is required"));
    }
    let sim = &rc.sim;
    let plant = crate::plant::Plant::by_name(&sim.plant)
        .ok_or_else(|| Error::out_of_range("plant", format!("unknown plant `{}`", sim.plant)))?;
    positive("h", sim.h)?;
    if sim.h > 0.1 {
        return Err(Error::out_of_range("h", format!("{} exceeds 0.1 s", sim.h)));
    }
    if sim.controller.gains.len() != plant.order() {
        return Err(Error::out_of_range("gains", format!("plant order is {}", plant.order())));
    }
    if sim.stack_capacity < plant.num_weights() {
        return Err(Error::out_of_range("stack_capacity", format!("must be ≥ {}", plant.num_weights())));
    }
    if sim.gp.window < 2 {
        return Err(Error::out_of_range("gp_window", "must be ≥ 2"));
    }
    if sim.gp.max_iter == 0 {
        return Err(Error::out_of_range("gp_max_iter", "must be ≥ 1"));
    }
    sim.controller.validate()
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", items.join(","))
}

impl RunConfig {
    /// Every resolved setting as `(key, value)` in document syntax.
    pub fn resolved_pairs(&self) -> Vec<(String, String)> {
        let s = &self.sim;
        let opt = |v: Option<bool>| v.map_or_else(|| "case_default".to_string(), |b| b.to_string());
        let cases: Vec<&str> = self.cases.iter().map(|c| c.as_str()).collect();
        let q: Vec<String> = s.controller.q.iter().map(|r| fmt_list(r)).collect();
        vec![
            ("cases", format!("\"{}\"", cases.join(","))),
            ("out", format!("\"{}\"", self.out_dir.display())),
            ("seed", self.seed.to_string()),
            ("h", s.h.to_string()),
            ("plant", format!("\"{}\"", s.plant)),
            ("amplitude", s.amplitude.to_string()),
            ("omega", s.omega.to_string()),
            ("gains", fmt_list(&s.controller.gains)),
            ("m", s.controller.m.to_string()),
            ("rho", s.controller.rho.to_string()),
            ("Q", format!("[{}]", q.join(","))),
            ("R", s.controller.r.to_string()),
            ("gp_enabled", opt(s.gp_enabled)),
            ("rob_enabled", opt(s.rob_enabled)),
            ("cl_enabled", opt(s.cl_enabled)),
            ("m_auto", s.controller.m_auto.to_string()),
            ("gamma_w", s.gamma_w.to_string()),
            ("stack_capacity", s.stack_capacity.to_string()),
            ("record_period", s.record_period.to_string()),
            ("gp_window", s.gp.window.to_string()),
            ("gp_sample_period", s.gp.sample_period.to_string()),
            ("gp_refit_period", s.gp.refit_period.to_string()),
            ("gp_starts", s.gp.starts.to_string()),
            (
                "gp_lengthscale_mode",
                match s.gp.lengthscale_mode {
                    LengthscaleMode::Shared => "\"shared\"".into(),
                    LengthscaleMode::PerDim => "\"per_dim\"".into(),
                },
            ),
            ("gp_sigma_n_floor", s.gp.sigma_n_floor.to_string()),
            ("gp_max_iter", s.gp.max_iter.to_string()),
            (
                "xdot_estimator",
                match s.xdot_estimator {
                    XdotEstimator::Exact => "\"exact\"".into(),
                    XdotEstimator::FiniteDifference => "\"finite_difference\"".into(),
                },
            ),
            ("paper_literal_gp_sign", s.paper_literal_gp_sign.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Header of the trace CSV for an order-`n` plant with `m` weights.
pub fn trace_header(n: usize, m: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=n).map(|i| format!("x{i}_ref")));
    cols.extend((1..=n).map(|i| format!("e{i}")));
    cols.extend(["u_total", "u_fbl", "u_sfb", "u_ref", "u_gp", "u_rob"].map(String::from));
    cols.extend((1..=m).map(|i| format!("w{i}")));
    cols.extend(["gp_mean", "gp_var", "d_true", "V", "Vdot", "stage"].map(String::from));
    cols
}

fn write_row(out: &mut impl Write, r: &TraceRow) -> std::io::Result<()> {
    let c = &r.control;
    write!(out, "{}", r.t)?;
    for v in r.x.iter().chain(&r.x_ref).chain(&r.e) {
        write!(out, ",{v}")?;
    }
    for v in [c.u_total, c.u_fbl, c.u_sfb, c.u_ref, c.u_gp, c.u_rob] {
        write!(out, ",{v}")?;
    }
    for v in r.w.iter().chain(&[r.gp_mean, r.gp_var, r.d_true, r.v, r.vdot]) {
        write!(out, ",{v}")?;
    }
    writeln!(out, ",{}", r.stage)
}

pub fn write_trace(trace: &Trace, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", trace_header(trace.order, trace.num_weights).join(","))?;
    for r in &trace.rows {
        write_row(out, r)?;
    }
    Ok(())
}

/// Writes the trace as CSV. `f64` values use the shortest representation
/// that parses back to the same bits.
pub fn emit_trace(trace: &Trace, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_trace(trace, &mut out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

/// Parses trace CSV back into rows (exported columns only).
pub fn parse_trace_csv(text: &str, n: usize, m: usize) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty trace".into()))?;
    if header != trace_header(n, m).join(",") {
        return Err(Error::Parse("trace header does not match the schema".into()));
    }
    let width = trace_header(n, m).len();
    lines
        .enumerate()
        .map(|(i, line)| {
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", i + 2))))
                .collect::<Result<_>>()?;
            if vals.len() != width {
                return Err(Error::Parse(format!("line {}: {} fields, expected {width}", i + 2, vals.len())));
            }
            let mut it = vals.into_iter();
            let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
            let t = take(1)[0];
            let x = take(n);
            let x_ref = take(n);
            let e = take(n);
            let u = take(6);
            let w = take(m);
            let tail = take(6);
            Ok(TraceRow {
                t,
                x,
                x_ref,
                e,
                control: crate::controller::ControlBreakdown {
                    u_total: u[0],
                    u_fbl: u[1],
                    u_sfb: u[2],
                    u_ref: u[3],
                    u_gp: u[4],
                    u_rob: u[5],
                },
                w,
                gp_mean: tail[0],
                gp_var: tail[1],
                d_true: tail[2],
                v: tail[3],
                vdot: tail[4],
                stage: tail[5] as u8,
                xdot_n_measured: f64::NAN,
                m: f64::NAN,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Report file contents.
    pub text: String,
    /// Console table.
    pub table: String,
    pub checks: Vec<Check>,
    pub ratios: Vec<(&'static str, f64)>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn find(metrics: &[Metrics], case: CaseId) -> Option<&Metrics> {
    metrics.iter().find(|m| m.case_id == Some(case))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x}"))
}

/// Builds the report: config echo, per-case/per-stage metrics, the case
/// e / case b ratio and the ordering checks that apply to the cases present.
pub fn build_report(metrics: &[Metrics], config: Option<&RunConfig>) -> Report {
    use CaseId::*;
    let mut checks = Vec::new();
    let mut ratios = Vec::new();
    if let (Some(a), Some(b)) = (find(metrics, A), find(metrics, B)) {
        checks.push(Check { name: "a_gt_b_overall", lhs: a.overall_pct, rhs: b.overall_pct, passed: a.overall_pct > b.overall_pct });
    }
    if let (Some(c), Some(e)) = (find(metrics, C), find(metrics, E)) {
        let (lhs, rhs) = (c.stage(3).unwrap_or(f64::NAN), e.stage(3).unwrap_or(f64::NAN));
        checks.push(Check { name: "c_gt_e_stage3", lhs, rhs, passed: lhs > rhs });
    }
    if let (Some(d), Some(e)) = (find(metrics, D), find(metrics, E)) {
        let (lhs, rhs) = (d.stage(3).unwrap_or(f64::NAN), e.stage(3).unwrap_or(f64::NAN));
        checks.push(Check { name: "d_within_2x_e_stage3", lhs, rhs: 2.0 * rhs, passed: lhs <= 2.0 * rhs });
    }
    if let (Some(b), Some(e)) = (find(metrics, B), find(metrics, E)) {
        if let (Some(b1), Some(e3)) = (b.stage(1), e.stage(3)) {
            ratios.push(("e_stage3_over_b_stage1", e3 / b1));
        }
    }

    let mut text = String::from("# fblgp report v1\n");
    if let Some(rc) = config {
        for (k, v) in rc.resolved_pairs() {
            let _ = writeln!(text, "config key={k} value={v}");
        }
    }
    for m in metrics {
        let case = m.case_id.map_or("custom", |c| c.as_str());
        for (s, v) in m.stage_pct.iter().enumerate() {
            let _ = writeln!(text, "metric case={case} stage={} avg_tracking_error_pct={}", s + 1, fmt_opt(*v));
        }
        let _ = writeln!(text, "metric case={case} stage=overall avg_tracking_error_pct={}", m.overall_pct);
        let _ = writeln!(
            text,
            "weights case={case} switch_weight_error={} final_weight_error={}",
            fmt_opt(m.switch_weight_error),
            m.final_weight_error
        );
    }
    for (name, v) in &ratios {
        let _ = writeln!(text, "ratio name={name} value={v}");
    }
    for c in &checks {
        let status = if c.passed { "pass" } else { "fail" };
        let _ = writeln!(text, "check name={} lhs={} rhs={} status={status}", c.name, c.lhs, c.rhs);
    }

    let mut table = String::new();
    let _ = writeln!(table, "{:<5} {:>10} {:>10} {:>10} {:>10} {:>12}", "case", "stage1 %", "stage2 %", "stage3 %", "overall %", "|w-w*|inf");
    for m in metrics {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(
            table,
            "{:<5} {:>10} {:>10} {:>10} {:>10.4} {:>12.4}",
            m.case_id.map_or("-", |c| c.as_str()),
            cell(m.stage_pct[0]),
            cell(m.stage_pct[1]),
            cell(m.stage_pct[2]),
            m.overall_pct,
            m.final_weight_error
        );
    }
    for (name, v) in &ratios {
        let _ = writeln!(table, "{name} = {v:.4}");
    }
    for c in &checks {
        let _ = writeln!(table, "{:<24} {} ({:.4} vs {:.4})", c.name, if c.passed { "PASS" } else { "FAIL" }, c.lhs, c.rhs);
    }
    Report { text, table, checks, ratios }
}

/// Writes the report file and returns it for console output.
pub fn emit_report(metrics: &[Metrics], config: Option<&RunConfig>, path: &Path) -> Result<Report> {
    let report = build_report(metrics, config);
    fs::write(path, &report.text).map_err(|e| Error::io(path, e))?;
    Ok(report)
}

/// Runs the configured cases on scoped threads. Results keep case order.
pub fn run_all(rc: &RunConfig) -> Result<Vec<(Trace, Metrics)>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = rc
            .cases
            .iter()
            .map(|&case| scope.spawn(move || crate::simulator::run_case(&rc.sim.scenario(case), &rc.sim, rc.seed)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    })
}

/// Runs every case and writes `trace_<case>.csv` and `report.txt` into the
/// output directory.
pub fn execute(rc: &RunConfig) -> Result<Report> {
    validate(rc)?;
    fs::create_dir_all(&rc.out_dir).map_err(|e| Error::io(&rc.out_dir, e))?;
    let results = run_all(rc)?;
    for (trace, m) in &results {
        let case = m.case_id.map_or("custom", |c| c.as_str());
        emit_trace(trace, &rc.out_dir.join(format!("trace_{case}.csv")))?;
    }
    let metrics: Vec<Metrics> = results.into_iter().map(|(_, m)| m).collect();
    emit_report(&metrics, Some(rc), &rc.out_dir.join("report.txt"))
}
