//! Step-size analysis for the stale-gradient iteration.
//!
//! With every block processed once per sweep and no regularization the
//! iterate obeys `x[k+1] = x[k] + 2 mu A^T (y - A x[k-1])`. Stacking
//! `(x[k-1], x[k])` gives the companion matrix
//!
//! ```text
//! M = [ 0            I ]
//!     [ -2 mu A^T A  I ]
//! ```
//!
//! whose eigenvalues solve `v - v^2 = 2 mu u` for each eigenvalue `u` of
//! `A^T A`. Both roots lie strictly inside the unit disc iff
//! `0 < mu < 1 / (2 u)`, so the admissible steps are `(0, 1 / (2 u_max))`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{norm2, BlockOperator};

/// Largest column count accepted by the dense routines.
pub const DENSE_COLUMN_LIMIT: usize = 512;

const POWER_SEED: u64 = 0x5eed_0f_a7a;

/// Outcome of [`largest_eigenvalue`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    /// Rayleigh-quotient estimate of the top eigenvalue of `A^T A`.
    pub u_max: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Top eigenvalue of `A^T A` by power iteration from a fixed seeded start.
///
/// Products go through the instrumented operator and are charged. Stops when
/// the Rayleigh quotient changes by less than `tol` relative; if that never
/// happens within `max_iters` the last estimate is returned with
/// `converged = false`.
pub fn largest_eigenvalue(op: &BlockOperator, tol: f64, max_iters: usize) -> Result<PowerEstimate> {
    if op.nnz() == 0 {
        return Err(Error::InvalidInput("power iteration needs a nonzero matrix".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v: Vec<f64> = (0..op.ncols()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = norm2(&v);
    v.iter_mut().for_each(|e| *e /= n);

    let mut estimate = 0.0;
    for it in 1..=max_iters.max(1) {
        let av = op.apply(&v)?;
        let rayleigh = crate::linalg::norm2_sq(&av);
        let w = op.apply_transpose(&av)?;
        let wn = norm2(&w);
        let done = it > 1 && (rayleigh - estimate).abs() <= tol * rayleigh;
        estimate = rayleigh;
        if done {
            return Ok(PowerEstimate {
                u_max: estimate,
                iterations: it,
                converged: true,
            });
        }
        if wn == 0.0 {
            // Start vector landed in the null space; the estimate cannot move.
            return Ok(PowerEstimate {
                u_max: estimate,
                iterations: it,
                converged: false,
            });
        }
        v = w.into_iter().map(|e| e / wn).collect();
    }
    Ok(PowerEstimate {
        u_max: estimate,
        iterations: max_iters.max(1),
        converged: false,
    })
}

/// Admissible step range `(0, mu_sup)` with `mu_sup = 1 / (2 u_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBound {
    pub u_max: f64,
    pub mu_sup: f64,
}

impl StepBound {
    /// The open interval test; `mu == mu_sup` puts a root on the unit circle
    /// and is rejected.
    pub fn admits(&self, mu: f64) -> bool {
        mu > 0.0 && mu < self.mu_sup
    }
}

pub fn step_bound(u_max: f64) -> Result<StepBound> {
    if !(u_max > 0.0) || !u_max.is_finite() {
        return Err(Error::InvalidInput(format!("u_max must be positive, got {u_max}")));
    }
    Ok(StepBound {
        u_max,
        mu_sup: 1.0 / (2.0 * u_max),
    })
}

/// The two eigenvalues of the companion matrix attached to eigenvalue `u` of
/// `A^T A`: `(1 +- sqrt(1 - 8 mu u)) / 2`, complex when the discriminant is
/// negative.
pub fn iteration_eigenvalues(u: f64, mu: f64) -> (Complex64, Complex64) {
    let root = Complex64::new(1.0 - 8.0 * mu * u, 0.0).sqrt();
    let one = Complex64::new(1.0, 0.0);
    ((one + root) * 0.5, (one - root) * 0.5)
}

/// Larger modulus of the pair from [`iteration_eigenvalues`].
pub fn mode_radius(u: f64, mu: f64) -> f64 {
    let (a, b) = iteration_eigenvalues(u, mu);
    a.norm().max(b.norm())
}

fn check_dense(op: &BlockOperator) -> Result<()> {
    if op.ncols() > DENSE_COLUMN_LIMIT {
        return Err(Error::SizeLimit {
            cols: op.ncols(),
            limit: DENSE_COLUMN_LIMIT,
        });
    }
    Ok(())
}

/// Dense `A^T A`.
pub fn normal_matrix(op: &BlockOperator) -> Result<DMatrix<f64>> {
    check_dense(op)?;
    let m = op.matrix();
    let a = DMatrix::from_row_slice(m.nrows(), m.ncols(), &m.to_dense());
    Ok(a.transpose() * a)
}

/// All eigenvalues of `A^T A` (ascending) from a dense symmetric solver.
pub fn normal_matrix_eigenvalues(op: &BlockOperator) -> Result<Vec<f64>> {
    let ata = normal_matrix(op)?;
    let mut vals: Vec<f64> = SymmetricEigen::new(ata).eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// The explicit `2c x 2c` companion matrix.
pub fn iteration_matrix(op: &BlockOperator, mu: f64) -> Result<DMatrix<f64>> {
    let ata = normal_matrix(op)?;
    let c = ata.nrows();
    let mut m = DMatrix::zeros(2 * c, 2 * c);
    for k in 0..c {
        m[(k, c + k)] = 1.0;
        m[(c + k, c + k)] = 1.0;
    }
    for r in 0..c {
        for s in 0..c {
            m[(c + r, s)] = -2.0 * mu * ata[(r, s)];
        }
    }
    Ok(m)
}

/// Eigenvalues of the explicit companion matrix from a dense general solver.
pub fn iteration_matrix_eigenvalues(op: &BlockOperator, mu: f64) -> Result<Vec<Complex64>> {
    let m = iteration_matrix(op, mu)?;
    Ok(m.complex_eigenvalues().iter().copied().collect())
}

/// Spectral radius of the explicit companion matrix.
pub fn iteration_matrix_spectral_radius(op: &BlockOperator, mu: f64) -> Result<f64> {
    Ok(iteration_matrix_eigenvalues(op, mu)?
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max))
}

/// Spectral radius predicted from the eigenvalues of `A^T A` alone.
pub fn closed_form_spectral_radius(op: &BlockOperator, mu: f64) -> Result<f64> {
    Ok(normal_matrix_eigenvalues(op)?
        .iter()
        .map(|&u| mode_radius(u.max(0.0), mu))
        .fold(0.0, f64::max))
}
