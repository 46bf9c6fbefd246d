//! Finite-difference stencils for the spatial coupling term of the
//! flow-front model.
//!
//! The coupling matrix `G` applies a 2nd or 4th spatial derivative across
//! the line sensors. Interior rows hold the central stencil; rows too close
//! to an edge use one-sided stencils of the same derivative order,
//! mirror-symmetric between the two edges.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sparse-in-spirit derivative matrix over `n` equally spaced lines.
#[derive(Debug, Clone)]
pub struct Stencil {
    order: usize,
    n: usize,
    dx: f64,
    g: DMatrix<f64>,
}

// One-sided 2nd-order-accurate second derivative at the first node.
const FWD2: [f64; 4] = [2.0, -5.0, 4.0, -1.0];
// One-sided 2nd-order-accurate fourth derivatives at nodes 0 and 1.
const FWD4_0: [f64; 6] = [3.0, -14.0, 26.0, -24.0, 11.0, -2.0];
const FWD4_1: [f64; 6] = [2.0, -9.0, 16.0, -14.0, 6.0, -1.0];

/// Builds the coupling matrix for `n` lines with spacing `dx`.
///
/// `order` selects the derivative: 2 for the second derivative
/// (coefficients `[1, -2, 1]/dx²` in the interior) or 4 for the fourth
/// derivative (`[1, -4, 6, -4, 1]/dx⁴`).
pub fn build_stencil(n: usize, order: usize, dx: f64) -> Result<Stencil> {
    if order != 2 && order != 4 {
        return Err(Error::InvalidArgument(format!(
            "stencil order must be 2 or 4, got {order}"
        )));
    }
    if dx <= 0.0 {
        return Err(Error::InvalidArgument(format!("stencil spacing must be positive, got {dx}")));
    }
    if n < order + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} lines is too few for an order-{order} stencil (need at least {})",
            order + 1
        )));
    }

    let scale = 1.0 / dx.powi(order as i32);
    let mut g = DMatrix::<f64>::zeros(n, n);
    let half = order / 2;

    for i in 0..n {
        if i >= half && i + half < n {
            // Central stencil.
            match order {
                2 => {
                    g[(i, i - 1)] = scale;
                    g[(i, i)] = -2.0 * scale;
                    g[(i, i + 1)] = scale;
                }
                _ => {
                    let c = [1.0, -4.0, 6.0, -4.0, 1.0];
                    for (k, &v) in c.iter().enumerate() {
                        g[(i, i - 2 + k)] = v * scale;
                    }
                }
            }
            continue;
        }

        // Boundary rows: one-sided coefficients anchored at the near edge,
        // mirrored for the far edge (even derivatives are reflection
        // invariant, so reversing the coefficient order is exact).
        let coeffs: Vec<f64> = match order {
            2 => {
                if n >= 4 {
                    FWD2.to_vec()
                } else {
                    vec![1.0, -2.0, 1.0]
                }
            }
            _ => {
                if n >= 6 {
                    if i == 0 || i == n - 1 {
                        FWD4_0.to_vec()
                    } else {
                        FWD4_1.to_vec()
                    }
                } else {
                    vec![1.0, -4.0, 6.0, -4.0, 1.0]
                }
            }
        };
        if i < half {
            for (k, &v) in coeffs.iter().enumerate() {
                g[(i, k)] = v * scale;
            }
        } else {
            for (k, &v) in coeffs.iter().enumerate() {
                g[(i, n - 1 - k)] = v * scale;
            }
        }
    }

    Ok(Stencil { order, n, dx, g })
}

impl Stencil {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        self.dx
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.g * y
    }
}
