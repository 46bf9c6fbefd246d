//! Small dense/matrix-free numerical helpers shared by the solver and filter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Replaces `m` with `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Matrix exponential by scaling-and-squaring with a Taylor series.
///
/// Intended for the small, well-scaled matrices that appear in the filter
/// initialization; not a general-purpose expm.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let norm = a.amax() * n as f64;
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        squarings += 1;
        scale *= 0.5;
    }
    let b = a * scale;

    // Taylor series; terms decay fast once ||b|| <= 1/2.
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=20 {
        term = (&term * &b) / k as f64;
        result += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Outcome of a conjugate-gradient solve.
pub struct CgOutcome {
    pub iterations: usize,
    /// Final preconditioned residual 2-norm relative to the rhs norm.
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradient for a matrix-free SPD operator.
///
/// `apply` computes `out = A x`; `precond` applies an SPD preconditioner
/// approximating `A⁻¹` (e.g. Jacobi or incomplete Cholesky). `x` holds the
/// initial guess on entry and the solution on exit.
pub fn conjugate_gradient<F, P>(
    apply: F,
    precond: P,
    b: &DVector<f64>,
    x: &mut DVector<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    F: Fn(&DVector<f64>, &mut DVector<f64>),
    P: Fn(&DVector<f64>, &mut DVector<f64>),
{
    let n = b.len();
    let mut ax = DVector::zeros(n);
    apply(x, &mut ax);
    let mut r = b - &ax;
    let mut z = DVector::zeros(n);
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = r.dot(&z);

    let b_norm = b.norm();
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(CgOutcome { iterations: 0, relative_residual: 0.0 });
    }
    let target = rel_tol * b_norm;

    for iter in 0..max_iter {
        if r.norm() <= target {
            return Ok(CgOutcome { iterations: iter, relative_residual: r.norm() / b_norm });
        }
        apply(&p, &mut ax);
        let pap = p.dot(&ax);
        if pap <= 0.0 {
            return Err(Error::Numerical(format!(
                "conjugate gradient: operator not positive definite (pAp = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ax, 1.0);
        precond(&r, &mut z);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + &p * beta;
    }
    let rel = r.norm() / b_norm;
    if rel <= rel_tol * 10.0 {
        // Close enough for the caller's residual check to arbitrate.
        return Ok(CgOutcome { iterations: max_iter, relative_residual: rel });
    }
    Err(Error::Numerical(format!(
        "conjugate gradient failed to converge: relative residual {rel:e} after {max_iter} iterations"
    )))
}
