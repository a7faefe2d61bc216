//! Composite control law
//! `u = u_fbl + u_sfb + u_ref − u_gp − u_rob`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{solve_lyapunov, Matrix};
use crate::plant::dot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// State-feedback gains `k_1 … k_n`.
    pub gains: Vec<f64>,
    /// Robustness gain `m`.
    pub m: f64,
    /// Boundary-layer half width `ρ` of the robustness term.
    pub rho: f64,
    /// Row-major `Q`, n×n.
    pub q: Vec<Vec<f64>>,
    /// Scalar input weight in `S̃ = Q + kᵀRk`.
    pub r: f64,
    pub gp_enabled: bool,
    pub rob_enabled: bool,
    /// Adapt `m` from the measured model mismatch instead of using a constant.
    pub m_auto: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gains: vec![20.0, 20.0],
            m: 1.0,
            rho: 0.01,
            q: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            r: 0.01,
            gp_enabled: false,
            rob_enabled: false,
            m_auto: false,
        }
    }
}

impl ControllerConfig {
    pub fn order(&self) -> usize {
        self.gains.len()
    }

    pub fn q_matrix(&self) -> Result<Matrix> {
        let n = self.order();
        if self.q.len() != n || self.q.iter().any(|row| row.len() != n) {
            return Err(Error::Dimension(format!("Q must be {n}x{n}")));
        }
        Ok(Matrix::from_fn(n, n, |i, j| self.q[i][j]))
    }

    /// `A − bk` for the integrator chain.
    pub fn closed_loop_matrix(&self) -> Matrix {
        let n = self.order();
        Matrix::from_fn(n, n, |i, j| {
            if i == n - 1 {
                (if j == i + 1 { 1.0 } else { 0.0 }) - self.gains[j]
            } else if j == i + 1 {
                1.0
            } else {
                0.0
            }
        })
    }

    /// `S̃ = Q + kᵀ R k`.
    pub fn s_tilde(&self) -> Result<Matrix> {
        let n = self.order();
        let q = self.q_matrix()?;
        Ok(q + Matrix::from_fn(n, n, |i, j| self.r * self.gains[i] * self.gains[j]))
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains.is_empty() {
            return Err(Error::out_of_range("gains", "at least one gain is required"));
        }
        if !(self.m >= 0.0) || !self.m.is_finite() {
            return Err(Error::out_of_range("m", "must be finite and ≥ 0"));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::out_of_range("rho", "must be finite and > 0"));
        }
        if !(self.r >= 0.0) || !self.r.is_finite() {
            return Err(Error::out_of_range("R", "must be finite and ≥ 0"));
        }
        let q = self.q_matrix()?;
        crate::numerics::cholesky(&q, 0.0).map_err(|_| Error::out_of_range("Q", "must be symmetric positive definite"))?;
        Ok(())
    }
}

/// Individual terms of one control evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ControlBreakdown {
    pub u_fbl: f64,
    pub u_sfb: f64,
    pub u_ref: f64,
    pub u_gp: f64,
    pub u_rob: f64,
    pub u_total: f64,
}

impl ControlBreakdown {
    /// Sum in the fixed evaluation order; bit-identical to `u_total` for any
    /// breakdown built by [`ControlLaw::compute`].
    pub fn recombine(&self) -> f64 {
        self.u_fbl + self.u_sfb + self.u_ref - self.u_gp - self.u_rob
    }
}

/// Solves `(A−bk)ᵀP + P(A−bk) + Q + kᵀRk = 0`.
pub fn compute_p(cfg: &ControllerConfig) -> Result<Matrix> {
    solve_lyapunov(&cfg.closed_loop_matrix(), &cfg.s_tilde()?)
}

/// `bᵀPe`, i.e. the last row of `P` applied to `e`.
pub fn sliding_variable(p: &Matrix, e: &[f64]) -> f64 {
    let n = p.nrows();
    (0..n).map(|j| p[(n - 1, j)] * e[j]).sum()
}

/// Boundary-layer version of `−m·s/|s|` with `s = bᵀPe`: saturated sign
/// outside `|s| ≤ ρ`, linear ramp inside.
pub fn robustness_term(p: &Matrix, e: &[f64], m: f64, rho: f64) -> f64 {
    robustness_from_sliding(sliding_variable(p, e), m, rho)
}

pub fn robustness_from_sliding(s: f64, m: f64, rho: f64) -> f64 {
    if s.abs() > rho {
        -m * s.signum()
    } else {
        -m * s / rho
    }
}

/// Controller configuration paired with its Lyapunov matrix.
#[derive(Debug, Clone)]
pub struct ControlLaw {
    pub cfg: ControllerConfig,
    pub p: Matrix,
}

impl ControlLaw {
    pub fn new(cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        let p = compute_p(&cfg)?;
        Ok(Self { cfg, p })
    }

    /// Evaluates every term with an explicit robustness gain.
    #[allow(clippy::too_many_arguments)]
    pub fn compute(&self, m: f64, w: &[f64], phi: &[f64], e: &[f64], xdot_n_ref: f64, gp_mean: f64) -> ControlBreakdown {
        let u_fbl = -dot(w, phi);
        let u_sfb = dot(&self.cfg.gains, e);
        let u_ref = xdot_n_ref;
        let u_gp = if self.cfg.gp_enabled { gp_mean } else { 0.0 };
        let u_rob = if self.cfg.rob_enabled { robustness_term(&self.p, e, m, self.cfg.rho) } else { 0.0 };
        let mut b = ControlBreakdown { u_fbl, u_sfb, u_ref, u_gp, u_rob, u_total: 0.0 };
        b.u_total = b.recombine();
        b
    }
}

pub fn compute_control(
    cfg: &ControllerConfig,
    p: &Matrix,
    w: &[f64],
    phi: &[f64],
    e: &[f64],
    xdot_n_ref: f64,
    gp_mean: f64,
) -> ControlBreakdown {
    ControlLaw { cfg: cfg.clone(), p: p.clone() }.compute(cfg.m, w, phi, e, xdot_n_ref, gp_mean)
}

/// Robustness gain tracking `1.1 × max |ẋ_n,measured − ẋ_n,predicted|`,
/// clamped to `[0.1, 10]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AutoGain {
    running_max: f64,
}

impl AutoGain {
    pub const MIN: f64 = 0.1;
    pub const MAX: f64 = 10.0;

    pub fn observe(&mut self, mismatch: f64) {
        if mismatch.is_finite() {
            self.running_max = self.running_max.max(mismatch.abs());
        }
    }

    pub fn gain(&self) -> f64 {
        (1.1 * self.running_max).clamp(Self::MIN, Self::MAX)
    }
}
