//! Linearly parameterized SISO plants in integrator-chain form and their
//! reference trajectories.
//!
//! The plant is `ẋ = A x + b (u + w*ᵀφ(x) + d)` with `A` the n×n chain of
//! integrators and `b = [0, …, 0, 1]ᵀ`; only the last row is stored.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Name of the built-in second-order benchmark plant.
pub const BENCHMARK_PLANT: &str = "benchmark_5717148";

/// States with any `|x_i|` above this bound abort the simulation.
pub const STATE_BOUND: f64 = 1e3;

pub type RegressorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ShapeFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// External disturbance `d(t, x)`, nonzero only on `[onset, end]`.
#[derive(Clone)]
pub struct Disturbance {
    pub onset: f64,
    pub end: f64,
    shape: ShapeFn,
}

impl Disturbance {
    pub fn new(onset: f64, end: f64, shape: ShapeFn) -> Self {
        Self { onset, end, shape }
    }

    pub fn none() -> Self {
        Self::new(f64::INFINITY, f64::INFINITY, Arc::new(|_| 0.0))
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.onset && t <= self.end
    }

    /// State-dependent part, independent of the time gate.
    pub fn shape(&self, x: &[f64]) -> f64 {
        (self.shape)(x)
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        if self.is_active(t) {
            self.shape(x)
        } else {
            0.0
        }
    }
}

impl fmt::Debug for Disturbance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Disturbance").field("onset", &self.onset).field("end", &self.end).finish()
    }
}

#[derive(Clone)]
pub struct Plant {
    order: usize,
    ideal_weights: Vec<f64>,
    regressor: RegressorFn,
    pub disturbance: Disturbance,
}

impl fmt::Debug for Plant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Plant")
            .field("order", &self.order)
            .field("ideal_weights", &self.ideal_weights)
            .field("disturbance", &self.disturbance)
            .finish()
    }
}

impl Plant {
    pub fn new(order: usize, ideal_weights: Vec<f64>, regressor: RegressorFn, disturbance: Disturbance) -> Self {
        assert!(order >= 1, "plant order must be positive");
        Self { order, ideal_weights, regressor, disturbance }
    }

    /// `θ̈ = u + sin θ − |θ̇|θ + 0.5 exp(θθ̇) + d`, with `d = cos θ + θ̇` on
    /// `10 ≤ t ≤ 30`.
    pub fn benchmark() -> Self {
        Self::new(
            2,
            vec![1.0, -1.0, 0.5],
            Arc::new(|x: &[f64]| vec![x[0].sin(), x[1].abs() * x[0], (x[0] * x[1]).exp()]),
            Disturbance::new(10.0, 30.0, Arc::new(|x: &[f64]| x[0].cos() + x[1])),
        )
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            BENCHMARK_PLANT => Some(Self::benchmark()),
            _ => None,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_weights(&self) -> usize {
        self.ideal_weights.len()
    }

    pub fn ideal_weights(&self) -> &[f64] {
        &self.ideal_weights
    }

    /// Integrator chain `A` (ones on the superdiagonal).
    pub fn a_matrix(&self) -> Matrix {
        Matrix::from_fn(self.order, self.order, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
    }

    pub fn b_vector(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.order];
        b[self.order - 1] = 1.0;
        b
    }

    pub fn eval_regressor(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.order {
            return Err(Error::Dimension(format!("state of length {} for order {}", x.len(), self.order)));
        }
        let phi = (self.regressor)(x);
        if phi.len() != self.ideal_weights.len() {
            return Err(Error::Dimension(format!(
                "regressor returned {} values for {} weights",
                phi.len(),
                self.ideal_weights.len()
            )));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regressor"));
        }
        Ok(phi)
    }

    /// Rejects states outside `|x_i| ≤ STATE_BOUND`.
    pub fn check_state(&self, t: f64, x: &[f64]) -> Result<()> {
        match x.iter().enumerate().find(|(_, v)| !(v.abs() <= STATE_BOUND)) {
            Some((index, &value)) => Err(Error::StateEscape { t, index, value }),
            None => Ok(()),
        }
    }

    /// `ẋ_n = w*ᵀφ(x) + u + d` for a given disturbance value.
    pub fn last_derivative(&self, phi: &[f64], u: f64, d: f64) -> f64 {
        dot(&self.ideal_weights, phi) + u + d
    }

    pub fn plant_derivative(&self, t: f64, x: &[f64], u: f64) -> Result<Vec<f64>> {
        let phi = self.eval_regressor(x)?;
        let d = self.disturbance.value(t, x);
        let mut dx = Vec::with_capacity(self.order);
        dx.extend_from_slice(&x[1..]);
        dx.push(self.last_derivative(&phi, u, d));
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plant derivative"));
        }
        Ok(dx)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reference trajectory `(x_ref(t), ẋ_n,ref(t))` whose components form a
/// derivative chain.
pub trait ReferenceModel: Send + Sync {
    fn order(&self) -> usize;
    fn eval(&self, t: f64) -> (Vec<f64>, f64);
}

/// `x1_ref = A sin(ωt)` and its first n derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineReference {
    pub order: usize,
    pub amplitude: f64,
    pub omega: f64,
}

impl SineReference {
    pub fn new(order: usize, amplitude: f64, omega: f64) -> Self {
        Self { order, amplitude, omega }
    }

    fn derivative(&self, k: usize, t: f64) -> f64 {
        self.amplitude * self.omega.powi(k as i32) * (self.omega * t + k as f64 * FRAC_PI_2).sin()
    }
}

impl ReferenceModel for SineReference {
    fn order(&self) -> usize {
        self.order
    }

    fn eval(&self, t: f64) -> (Vec<f64>, f64) {
        let x_ref = (0..self.order).map(|k| self.derivative(k, t)).collect();
        (x_ref, self.derivative(self.order, t))
    }
}
