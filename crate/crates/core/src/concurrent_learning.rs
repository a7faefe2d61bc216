//! Concurrent-learning weight estimation.
//!
//! The update law combines the instantaneous tracking error with a sum over
//! recorded regressor samples:
//!
//! `ẇ = −Γ φ(x) eᵀPb − Γ Σ_j φ_j ε_j`,  `ε_j = wᵀφ_j − (ẋ_n,j − u_j)`.
//!
//! Samples are only valid when no disturbance acts on the plant, since
//! `ẋ_n,j − u_j` then equals `w*ᵀφ_j` exactly.

use nalgebra::SymmetricEigen;

use crate::controller::sliding_variable;
use crate::numerics::{Matrix, Vector};
use crate::plant::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct StackRecord {
    pub phi: Vec<f64>,
    pub xdot_n: f64,
    pub u: f64,
}

impl StackRecord {
    /// `ẋ_n − u`, the disturbance-free stand-in for `w*ᵀφ`.
    pub fn target(&self) -> f64 {
        self.xdot_n - self.u
    }
}

/// `ε_j = wᵀφ_j − (ẋ_n,j − u_j)`.
pub fn prediction_error(w: &[f64], rec: &StackRecord) -> f64 {
    dot(w, &rec.phi) - rec.target()
}

/// Smallest singular value of the `m × p` matrix `[φ_1 … φ_p]`, counted as
/// zero when it has fewer than `m` columns.
fn min_singular_value(gram: &Matrix, count: usize) -> f64 {
    if count < gram.nrows() {
        return 0.0;
    }
    let eig = SymmetricEigen::new(gram.clone());
    eig.eigenvalues.min().max(0.0).sqrt()
}

fn outer(phi: &[f64]) -> Matrix {
    let v = Vector::from_column_slice(phi);
    &v * v.transpose()
}

/// Bounded set of recorded samples chosen to maximise the smallest singular
/// value of the stacked regressors.
#[derive(Debug, Clone)]
pub struct HistoryStack {
    capacity: usize,
    dim: usize,
    records: Vec<StackRecord>,
    /// `Σ φ_j φ_jᵀ`
    gram: Matrix,
    /// `Σ φ_j (ẋ_n,j − u_j)`
    cross: Vector,
    min_sv: f64,
}

impl HistoryStack {
    pub fn new(capacity: usize, dim: usize) -> Self {
        assert!(capacity >= 1 && dim >= 1);
        Self {
            capacity,
            dim,
            records: Vec::with_capacity(capacity),
            gram: Matrix::zeros(dim, dim),
            cross: Vector::zeros(dim),
            min_sv: 0.0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.records.len() == self.capacity
    }

    pub fn records(&self) -> &[StackRecord] {
        &self.records
    }

    pub fn min_singular_value(&self) -> f64 {
        self.min_sv
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    fn rebuild(&mut self) {
        self.gram = Matrix::zeros(self.dim, self.dim);
        self.cross = Vector::zeros(self.dim);
        for r in &self.records {
            self.gram += outer(&r.phi);
            self.cross += Vector::from_column_slice(&r.phi) * r.target();
        }
        self.min_sv = min_singular_value(&self.gram, self.records.len());
    }

    /// Offers a sample. While filling, any nonzero regressor is appended; once
    /// full, the sample replaces the record whose swap raises the smallest
    /// singular value the most, and is rejected if no swap raises it.
    pub fn try_record(&mut self, phi: &[f64], xdot_n: f64, u: f64) -> bool {
        assert_eq!(phi.len(), self.dim, "regressor dimension");
        if !phi.iter().all(|v| v.is_finite()) || !xdot_n.is_finite() || !u.is_finite() {
            return false;
        }
        if dot(phi, phi) == 0.0 {
            return false;
        }
        let rec = StackRecord { phi: phi.to_vec(), xdot_n, u };
        if !self.is_full() {
            self.records.push(rec);
            self.rebuild();
            return true;
        }

        let added = outer(phi);
        let mut best: Option<(usize, f64)> = None;
        for (i, old) in self.records.iter().enumerate() {
            let candidate = &self.gram - outer(&old.phi) + &added;
            let sv = min_singular_value(&candidate, self.records.len());
            if best.map_or(true, |(_, b)| sv > b) {
                best = Some((i, sv));
            }
        }
        match best {
            Some((i, sv)) if sv > self.min_sv => {
                self.records[i] = rec;
                self.rebuild();
                true
            }
            _ => false,
        }
    }

    /// `Σ_j φ_j ε_j` for the given weights.
    pub fn correction(&self, w: &[f64]) -> Vector {
        &self.gram * Vector::from_column_slice(w) - &self.cross
    }
}

#[derive(Debug, Clone)]
pub struct LearnerState {
    pub w: Vec<f64>,
    pub gamma_w: f64,
    pub stack: HistoryStack,
    pub active: bool,
}

impl LearnerState {
    pub fn new(w0: Vec<f64>, gamma_w: f64, stack_capacity: usize) -> Self {
        assert!(gamma_w > 0.0, "learning rate must be positive");
        let dim = w0.len();
        Self { w: w0, gamma_w, stack: HistoryStack::new(stack_capacity, dim), active: true }
    }

    /// `ẇ` evaluated at arbitrary weights `w`, so RK4 stages can use it.
    pub fn derivative_at(&self, w: &[f64], phi_now: &[f64], e: &[f64], p: &Matrix) -> Vec<f64> {
        if !self.active {
            return vec![0.0; w.len()];
        }
        // eᵀPb equals bᵀPe for symmetric P
        let s = sliding_variable(p, e);
        let correction = self.stack.correction(w);
        phi_now
            .iter()
            .zip(correction.iter())
            .map(|(phi_i, c_i)| -self.gamma_w * phi_i * s - self.gamma_w * c_i)
            .collect()
    }
}

pub fn weight_update_derivative(state: &LearnerState, phi_now: &[f64], e: &[f64], p: &Matrix) -> Vec<f64> {
    state.derivative_at(&state.w, phi_now, e, p)
}
