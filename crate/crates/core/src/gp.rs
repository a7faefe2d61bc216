//! Exact Gaussian-process regression with a squared-exponential kernel,
//! trained online over a sliding window.
//!
//! Hyperparameters are optimised on the log scale by multi-start gradient
//! ascent of the log marginal likelihood. Predictions always come from the
//! last fitted snapshot, so appending data between refits never leaves the
//! model in a half-updated state.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, CholeskyFactor, Matrix, Vector};
use crate::plant::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LengthscaleMode {
    #[default]
    Shared,
    PerDim,
}

impl FromStr for LengthscaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Self::Shared),
            "per_dim" => Ok(Self::PerDim),
            other => Err(Error::out_of_range("gp_lengthscale_mode", format!("`{other}` is not shared|per_dim"))),
        }
    }
}

/// Kernel hyperparameters. A single length scale is shared by every input
/// dimension; otherwise there is one per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub sigma_f: f64,
    pub lengthscales: Vec<f64>,
    pub sigma_n: f64,
}

impl Hyperparams {
    pub fn new(sigma_f: f64, lengthscale: f64, sigma_n: f64) -> Self {
        Self { sigma_f, lengthscales: vec![lengthscale], sigma_n }
    }

    fn lengthscale(&self, dim: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[dim]
        }
    }

    /// `[log σ_f, log l_1, …, log σ_n]`
    pub fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.lengthscales.len() + 2);
        v.push(self.sigma_f.ln());
        v.extend(self.lengthscales.iter().map(|l| l.ln()));
        v.push(self.sigma_n.ln());
        v
    }

    pub fn from_log(v: &[f64]) -> Self {
        let n = v.len();
        Self { sigma_f: v[0].exp(), lengthscales: v[1..n - 1].iter().map(|x| x.exp()).collect(), sigma_n: v[n - 1].exp() }
    }

    pub fn is_valid(&self) -> bool {
        self.sigma_f > 0.0
            && self.sigma_f.is_finite()
            && self.sigma_n >= 0.0
            && self.sigma_n.is_finite()
            && !self.lengthscales.is_empty()
            && self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite())
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::new(1.0, 1.0, 0.1)
    }
}

/// `σ_f² exp(−Σ_d (a_d − b_d)² / (2 l_d²))`
pub fn kernel(a: &[f64], b: &[f64], h: &Hyperparams) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let r2: f64 = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(d, (x, y))| {
            let l = h.lengthscale(d);
            (x - y) * (x - y) / (l * l)
        })
        .sum();
    h.sigma_f * h.sigma_f * (-0.5 * r2).exp()
}

fn signal_gram(xs: &[Vec<f64>], h: &Hyperparams) -> Matrix {
    let n = xs.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&xs[i], &xs[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Jitter applied to every Gram matrix, `1e-8 × (σ_f² + σ_n²)`.
fn gram_jitter(h: &Hyperparams) -> f64 {
    1e-8 * (h.sigma_f * h.sigma_f + h.sigma_n * h.sigma_n)
}

/// `K(X, X) + (σ_n² + jitter) I`, the matrix the posterior conditions on.
pub fn noisy_gram(xs: &[Vec<f64>], h: &Hyperparams) -> Matrix {
    let mut k = signal_gram(xs, h);
    let shift = h.sigma_n * h.sigma_n + gram_jitter(h);
    for i in 0..xs.len() {
        k[(i, i)] += shift;
    }
    k
}

fn check_data(xs: &[Vec<f64>], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!("{} inputs but {} targets", xs.len(), ys.len())));
    }
    if let Some(first) = xs.first() {
        if xs.iter().any(|x| x.len() != first.len()) {
            return Err(Error::Dimension("inputs of differing dimension".into()));
        }
    }
    Ok(())
}

fn lml_value(chol: &CholeskyFactor, ys: &[f64]) -> (f64, Vector) {
    let alpha = chol.solve(ys);
    let n = ys.len() as f64;
    let fit = dot(ys, alpha.as_slice());
    (-0.5 * fit - 0.5 * chol.log_det() - 0.5 * n * (2.0 * PI).ln(), alpha)
}

/// Log marginal likelihood of `(X, Y)` under `h`, without the gradient.
pub fn log_marginal_likelihood_value(xs: &[Vec<f64>], ys: &[f64], h: &Hyperparams) -> Result<f64> {
    check_data(xs, ys)?;
    let chol = cholesky(&noisy_gram(xs, h), 0.0)?;
    Ok(lml_value(&chol, ys).0)
}

/// Log marginal likelihood and its gradient with respect to
/// `[log σ_f, log l_1, …, log σ_n]`.
pub fn log_marginal_likelihood(xs: &[Vec<f64>], ys: &[f64], h: &Hyperparams) -> Result<(f64, Vec<f64>)> {
    check_data(xs, ys)?;
    let n = xs.len();
    let kf = signal_gram(xs, h);
    let mut ky = kf.clone();
    let shift = h.sigma_n * h.sigma_n + gram_jitter(h);
    for i in 0..n {
        ky[(i, i)] += shift;
    }
    let chol = cholesky(&ky, 0.0)?;
    let (value, alpha) = lml_value(&chol, ys);

    // W = ααᵀ − K_y⁻¹; ∂L/∂θ = ½ tr(W ∂K/∂θ)
    let mut w = &alpha * alpha.transpose() - chol.inverse();
    w = (&w + w.transpose()) * 0.5;

    let n_ls = h.lengthscales.len();
    let mut grad = vec![0.0; n_ls + 2];
    for i in 0..n {
        for j in 0..n {
            let wk = w[(i, j)] * kf[(i, j)];
            grad[0] += wk;
            if n_ls == 1 {
                let l = h.lengthscales[0];
                let r2: f64 = xs[i].iter().zip(&xs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                grad[1] += 0.5 * wk * r2 / (l * l);
            } else {
                for (d, l) in h.lengthscales.iter().enumerate() {
                    let diff = xs[i][d] - xs[j][d];
                    grad[1 + d] += 0.5 * wk * diff * diff / (l * l);
                }
            }
        }
    }
    grad[n_ls + 1] = h.sigma_n * h.sigma_n * w.trace();
    Ok((value, grad))
}

/// Fitted posterior: training inputs, Cholesky factor and `α = K_y⁻¹ Y`.
#[derive(Debug, Clone)]
pub struct GpSnapshot {
    inputs: Vec<Vec<f64>>,
    hyper: Hyperparams,
    chol: CholeskyFactor,
    alpha: Vector,
}

impl GpSnapshot {
    pub fn build(inputs: Vec<Vec<f64>>, targets: &[f64], hyper: Hyperparams) -> Result<Self> {
        check_data(&inputs, targets)?;
        if inputs.is_empty() {
            return Err(Error::Unfitted);
        }
        let chol = cholesky(&noisy_gram(&inputs, &hyper), 0.0)?;
        let alpha = chol.solve(targets);
        Ok(Self { inputs, hyper, chol, alpha })
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Posterior mean and latent variance at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k_star: Vec<f64> = self.inputs.iter().map(|xi| kernel(xi, x, &self.hyper)).collect();
        let mean = dot(&k_star, self.alpha.as_slice());
        let v = self.chol.solve_lower(&k_star);
        let var = kernel(x, x, &self.hyper) - v.dot(&v);
        (mean, var.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub window: usize,
    /// Seconds between training samples.
    pub sample_period: f64,
    /// Seconds between hyperparameter refits.
    pub refit_period: f64,
    /// Random starts in addition to the incumbent.
    pub starts: usize,
    pub lengthscale_mode: LengthscaleMode,
    pub sigma_n_floor: f64,
    pub max_iter: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            window: 100,
            sample_period: 0.1,
            refit_period: 0.5,
            starts: 5,
            lengthscale_mode: LengthscaleMode::Shared,
            sigma_n_floor: 1e-4,
            max_iter: 100,
        }
    }
}

/// Sliding-window GP: raw training data plus the last fitted snapshot.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub config: GpConfig,
    inputs: VecDeque<Vec<f64>>,
    targets: VecDeque<f64>,
    hyper: Hyperparams,
    snapshot: Option<GpSnapshot>,
    stale: bool,
}

impl GpModel {
    pub fn new(config: GpConfig) -> Self {
        Self {
            config,
            inputs: VecDeque::new(),
            targets: VecDeque::new(),
            hyper: Hyperparams::default(),
            snapshot: None,
            stale: false,
        }
    }

    pub fn with_hyper(config: GpConfig, hyper: Hyperparams) -> Self {
        Self { hyper, ..Self::new(config) }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.inputs.iter().cloned().collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.targets.iter().copied().collect()
    }

    /// True when data changed since the snapshot was built.
    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn snapshot(&self) -> Option<&GpSnapshot> {
        self.snapshot.as_ref()
    }

    /// Appends a pair, evicting the oldest beyond the window.
    pub fn observe(&mut self, x: Vec<f64>, y: f64) {
        self.inputs.push_back(x);
        self.targets.push_back(y);
        while self.inputs.len() > self.config.window {
            self.inputs.pop_front();
            self.targets.pop_front();
        }
        self.stale = true;
    }

    /// Refactors the current window with the current hyperparameters.
    pub fn rebuild(&mut self) -> Result<()> {
        if self.inputs.is_empty() {
            self.snapshot = None;
            self.stale = false;
            return Err(Error::Unfitted);
        }
        self.snapshot = Some(GpSnapshot::build(self.inputs(), &self.targets(), self.hyper.clone())?);
        self.stale = false;
        Ok(())
    }

    /// Posterior from the last snapshot; `Unfitted` when none exists.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.snapshot.as_ref().map(|s| s.predict(x)).ok_or(Error::Unfitted)
    }

    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        log_marginal_likelihood_value(&self.inputs(), &self.targets(), &self.hyper)
    }

    /// Maximises the log marginal likelihood from the incumbent plus
    /// `config.starts` seeded random starts, then rebuilds the snapshot.
    /// Returns the achieved log marginal likelihood.
    pub fn fit(&mut self, seed: u64) -> Result<f64> {
        if self.inputs.len() < 2 {
            return Err(Error::Unfitted);
        }
        let xs = self.inputs();
        let ys = self.targets();
        let dim = xs[0].len();
        let n_ls = match self.config.lengthscale_mode {
            LengthscaleMode::Shared => 1,
            LengthscaleMode::PerDim => dim,
        };
        let floor = self.config.sigma_n_floor.max(f64::MIN_POSITIVE).ln();

        let mut incumbent = self.hyper.clone();
        if incumbent.lengthscales.len() != n_ls {
            let l = incumbent.lengthscales[0];
            incumbent.lengthscales = vec![l; n_ls];
        }
        incumbent.sigma_n = incumbent.sigma_n.max(self.config.sigma_n_floor);

        let mut starts = vec![incumbent.to_log()];
        starts.extend(random_starts(&xs, &ys, n_ls, floor, self.config.starts, seed));

        let objective = Objective { xs: &xs, ys: &ys, log_floor: floor };
        let best = starts
            .iter()
            .filter_map(|s| objective.ascend(s.clone(), self.config.max_iter))
            .fold(None::<(Vec<f64>, f64)>, |best, cand| match best {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            });
        let (theta, value) = best.ok_or(Error::AllStartsFailed)?;
        self.hyper = Hyperparams::from_log(&theta);
        self.rebuild()?;
        Ok(value)
    }
}

fn random_starts(xs: &[Vec<f64>], ys: &[f64], n_ls: usize, log_floor: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = ys.len() as f64;
    let y_rms = (ys.iter().map(|y| y * y).sum::<f64>() / n).sqrt().max(1e-3);
    let dim = xs[0].len();
    let spread: Vec<f64> = (0..dim)
        .map(|d| {
            let mean = xs.iter().map(|x| x[d]).sum::<f64>() / n;
            (xs.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-3)
        })
        .collect();
    let shared_spread = (spread.iter().map(|s| s * s).sum::<f64>() / dim as f64).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut theta = Vec::with_capacity(n_ls + 2);
            theta.push(y_rms.ln() + rng.gen_range(-1.0..1.0));
            for d in 0..n_ls {
                let s = if n_ls == 1 { shared_spread } else { spread[d] };
                theta.push(s.ln() + rng.gen_range(-1.0..1.0));
            }
            theta.push(((0.1 * y_rms).ln() + rng.gen_range(-2.0..1.0)).max(log_floor));
            theta
        })
        .collect()
}

struct Objective<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [f64],
    log_floor: f64,
}

impl Objective<'_> {
    const ARMIJO: f64 = 1e-4;
    const MAX_STEP: f64 = 2.0;
    const GRAD_TOL: f64 = 1e-8;

    fn value(&self, theta: &[f64]) -> Option<f64> {
        log_marginal_likelihood_value(self.xs, self.ys, &Hyperparams::from_log(theta)).ok().filter(|v| v.is_finite())
    }

    fn value_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        log_marginal_likelihood(self.xs, self.ys, &Hyperparams::from_log(theta))
            .ok()
            .filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()))
    }

    /// Zeroes the noise component when it pushes against the floor.
    fn project_grad(&self, theta: &[f64], g: &mut [f64]) {
        let last = g.len() - 1;
        if theta[last] <= self.log_floor && g[last] < 0.0 {
            g[last] = 0.0;
        }
    }

    fn clamp(&self, theta: &mut [f64]) {
        let last = theta.len() - 1;
        theta[last] = theta[last].max(self.log_floor);
        for v in theta.iter_mut() {
            *v = v.clamp(-20.0, 20.0);
        }
    }

    /// Projected gradient ascent with Barzilai-Borwein step lengths and
    /// Armijo backtracking.
    fn ascend(&self, mut theta: Vec<f64>, max_iter: usize) -> Option<(Vec<f64>, f64)> {
        self.clamp(&mut theta);
        let (mut f, mut g) = self.value_grad(&theta)?;
        self.project_grad(&theta, &mut g);
        let mut step = 0.1;
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

        for _ in 0..max_iter {
            let gnorm = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if gnorm <= Self::GRAD_TOL * (1.0 + f.abs()) {
                break;
            }
            if let Some((ref th_prev, ref g_prev)) = prev {
                let s: Vec<f64> = theta.iter().zip(th_prev).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g.iter().zip(g_prev).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy.abs() > 0.0 {
                    step = (dot(&s, &s) / sy).abs().clamp(1e-8, 1e3);
                }
            }
            step = step.min(Self::MAX_STEP / gnorm);

            let mut accepted = None;
            for _ in 0..40 {
                let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + step * gi).collect();
                self.clamp(&mut cand);
                let moved: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
                if moved.iter().all(|d| *d == 0.0) {
                    break;
                }
                if let Some(fc) = self.value(&cand) {
                    if fc >= f + Self::ARMIJO * dot(&g, &moved) {
                        accepted = Some((cand, fc));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((cand, _)) = accepted else { break };
            let Some((fc, mut gc)) = self.value_grad(&cand) else { break };
            self.project_grad(&cand, &mut gc);
            prev = Some((std::mem::replace(&mut theta, cand), std::mem::replace(&mut g, gc)));
            f = fc;
        }
        Some((theta, f))
    }
}

/// GP training target `ẋ_n,measured − wᵀφ − u`, which equals `d − w̃ᵀφ`.
pub fn training_target(xdot_n_measured: f64, w: &[f64], phi: &[f64], u_applied: f64) -> f64 {
    xdot_n_measured - dot(w, phi) - u_applied
}
