//! Dense linear algebra for small systems, the Lyapunov solver and a
//! fixed-step RK4 integrator.
//!
//! Matrices are `nalgebra::DMatrix<f64>`; everything here is sized for
//! state dimensions up to ~5 and GP windows of ~100 points.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance on symmetry accepted by [`cholesky`].
const SYMMETRY_TOL: f64 = 1e-9;

/// Lower-triangular factor `L` with `L Lᵀ = M + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: Matrix,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves `L y = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Vector {
        let n = self.dim();
        let l = &self.lower;
        let mut y = Vector::zeros(n);
        for i in 0..n {
            let mut acc = b[i];
            for j in 0..i {
                acc -= l[(i, j)] * y[j];
            }
            y[i] = acc / l[(i, i)];
        }
        y
    }

    /// Solves `Lᵀ x = y` by back substitution.
    pub fn solve_upper(&self, y: &Vector) -> Vector {
        let n = self.dim();
        let l = &self.lower;
        let mut x = Vector::zeros(n);
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in (i + 1)..n {
                acc -= l[(j, i)] * x[j];
            }
            x[i] = acc / l[(i, i)];
        }
        x
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vector {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log det(L Lᵀ)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Inverse of the factored matrix, column by column.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        inv
    }
}

/// Jitter added to kernel matrices: `1e-8 × mean diagonal`.
pub fn default_jitter(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    1e-8 * m.diagonal().mean().abs()
}

/// Cholesky factorization of `m + jitter·I`.
pub fn cholesky(m: &Matrix, jitter: f64) -> Result<CholeskyFactor> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension(format!("cholesky of {}x{} matrix", n, m.ncols())));
    }
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Dimension(format!("matrix not symmetric at ({i}, {j})")));
            }
        }
    }

    let mut lower = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)] + jitter;
        for k in 0..j {
            pivot -= lower[(j, k)] * lower[(j, k)];
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { row: j, pivot });
        }
        let d = pivot.sqrt();
        lower[(j, j)] = d;
        for i in (j + 1)..n {
            let mut acc = m[(i, j)];
            for k in 0..j {
                acc -= lower[(i, k)] * lower[(j, k)];
            }
            lower[(i, j)] = acc / d;
        }
    }
    Ok(CholeskyFactor { lower })
}

/// Solves `A_clᵀ P + P A_cl + S = 0` for symmetric positive-definite `P`.
///
/// The n² unknowns are solved as one dense system
/// `(I ⊗ A_clᵀ + A_clᵀ ⊗ I) vec(P) = −vec(S)`.
pub fn solve_lyapunov(a_cl: &Matrix, s: &Matrix) -> Result<Matrix> {
    let n = a_cl.nrows();
    if a_cl.ncols() != n || s.nrows() != n || s.ncols() != n {
        return Err(Error::Dimension(format!(
            "lyapunov with A {}x{} and S {}x{}",
            a_cl.nrows(),
            a_cl.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    let at = a_cl.transpose();
    let eye = Matrix::identity(n, n);
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    // column-major vec, matching nalgebra storage
    let rhs = Vector::from_iterator(n * n, s.iter().map(|v| -v));
    let lu = op.lu();
    let vec_p = lu
        .solve(&rhs)
        .ok_or_else(|| Error::NotHurwitz("vectorized Lyapunov operator is singular".into()))?;
    if vec_p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotHurwitz("vectorized Lyapunov solve is not finite".into()));
    }
    let p = Matrix::from_column_slice(n, n, vec_p.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    // For S > 0 the solution is positive definite iff A_cl is Hurwitz.
    cholesky(&p, 0.0).map_err(|_| Error::NotHurwitz("Lyapunov solution is not positive definite".into()))?;
    Ok(p)
}

/// One classical RK4 step for a fallible derivative.
pub fn try_rk4_step<F>(mut f: F, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let check = |k: &[f64], ts: f64| -> Result<()> {
        if k.len() != n {
            return Err(Error::Dimension(format!("derivative length {} for state length {n}", k.len())));
        }
        if k.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteDerivative { t: ts })
        }
    };
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };

    let k1 = f(t, x)?;
    check(&k1, t)?;
    let k2 = f(t + 0.5 * h, &axpy(0.5 * h, &k1))?;
    check(&k2, t + 0.5 * h)?;
    let k3 = f(t + 0.5 * h, &axpy(0.5 * h, &k2))?;
    check(&k3, t + 0.5 * h)?;
    let k4 = f(t + h, &axpy(h, &k3))?;
    check(&k4, t + h)?;

    Ok((0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// One classical RK4 step.
pub fn rk4_step<F>(mut f: F, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    try_rk4_step(|t, x| Ok(f(t, x)), t, x, h)
}
