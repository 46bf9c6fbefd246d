//! Coupled-SDE grey-box model of the flow-front.
//!
//! Each line sensor obeys `dY_i = (C0_i / Y_i + D0 (G Y)_i) dt + sigma dW_i`
//! where `G` is a finite-difference coupling matrix across the lines. The
//! diffusion is shared by all lines and the reciprocal drift is clamped away
//! from the `Y = 0` singularity.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::stencil::Stencil;

/// Default clamp floor applied inside `1/Y` terms, in meters.
pub const DEFAULT_Y_MIN: f64 = 1e-3;

/// SDE parameters: per-line drift constants, the coupling coefficient, the
/// shared process diffusion and the measurement noise standard deviation.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Per-line drift constants `C0_i` in m²/s, all positive.
    pub c0: DVector<f64>,
    /// Spatial coupling coefficient; sign is unconstrained.
    pub d0: f64,
    /// Process diffusion std in m/√s.
    pub sigma: f64,
    /// Measurement noise std in m.
    pub s_meas: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.c0.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::InvalidArgument("every C0 entry must be positive".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        if !(self.s_meas > 0.0) {
            return Err(Error::InvalidArgument("s_meas must be positive".into()));
        }
        if !self.d0.is_finite() {
            return Err(Error::InvalidArgument("D0 must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.c0.len()
    }
}

/// Drift `f_i = C0_i / max(Y_i, y_min) + D0 (G Y)_i`.
pub fn drift(y: &DVector<f64>, params: &ModelParams, stencil: &Stencil, y_min: f64) -> DVector<f64> {
    let coupling = stencil.apply(y);
    DVector::from_fn(y.len(), |i, _| {
        params.c0[i] / y[i].max(y_min) + params.d0 * coupling[i]
    })
}

/// Jacobian `A = diag(-C0_i / Y_i²) + D0 G`.
///
/// Rows where `Y_i` sits at the clamp floor get a zero reciprocal-term
/// derivative, matching the piecewise-constant clamped drift there.
pub fn drift_jacobian(
    y: &DVector<f64>,
    params: &ModelParams,
    stencil: &Stencil,
    y_min: f64,
) -> DMatrix<f64> {
    let mut a = stencil.matrix() * params.d0;
    for i in 0..y.len() {
        if y[i] > y_min {
            a[(i, i)] += -params.c0[i] / (y[i] * y[i]);
        }
    }
    a
}

/// Process model consumed by the continuous-discrete filter.
pub trait ProcessModel {
    fn dim(&self) -> usize;
    fn drift(&self, y: &DVector<f64>) -> DVector<f64>;
    fn drift_jacobian(&self, y: &DVector<f64>) -> DMatrix<f64>;
    /// Shared diffusion std (the process noise covariance is `sigma² I`).
    fn diffusion_std(&self) -> f64;
    /// Measurement noise std (observation covariance is `s² I` before masking).
    fn measurement_std(&self) -> f64;
    /// Projects a propagated mean back into the admissible state set.
    fn clamp_state(&self, _y: &mut DVector<f64>) {}
}

/// The coupled flow-front model over a fixed stencil.
#[derive(Debug, Clone)]
pub struct CoupledFrontModel {
    pub params: ModelParams,
    pub stencil: Stencil,
    pub y_min: f64,
    /// `D0 · G`, precomputed because the filter queries the drift and its
    /// Jacobian four times per integration substep.
    coupling: DMatrix<f64>,
}

impl CoupledFrontModel {
    pub fn new(params: ModelParams, stencil: Stencil) -> Result<Self> {
        Self::with_floor(params, stencil, DEFAULT_Y_MIN)
    }

    pub fn with_floor(params: ModelParams, stencil: Stencil, y_min: f64) -> Result<Self> {
        params.validate()?;
        if params.dim() != stencil.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter dimension {} does not match stencil size {}",
                params.dim(),
                stencil.len()
            )));
        }
        let coupling = stencil.matrix() * params.d0;
        Ok(Self { params, stencil, y_min, coupling })
    }
}

impl ProcessModel for CoupledFrontModel {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn drift(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut f = &self.coupling * y;
        for i in 0..y.len() {
            f[i] += self.params.c0[i] / y[i].max(self.y_min);
        }
        f
    }

    fn drift_jacobian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut a = self.coupling.clone();
        for i in 0..y.len() {
            if y[i] > self.y_min {
                a[(i, i)] += -self.params.c0[i] / (y[i] * y[i]);
            }
        }
        a
    }

    fn diffusion_std(&self) -> f64 {
        self.params.sigma
    }

    fn measurement_std(&self) -> f64 {
        self.params.s_meas
    }

    fn clamp_state(&self, y: &mut DVector<f64>) {
        for v in y.iter_mut() {
            if *v < self.y_min {
                *v = self.y_min;
            }
        }
    }
}

/// Euler–Maruyama simulation of the coupled SDE, sampled every
/// `sample_interval` seconds. Deterministic in `seed`.
pub fn simulate_sde(
    params: &ModelParams,
    stencil: &Stencil,
    y0: &DVector<f64>,
    t_end: f64,
    dt_sim: f64,
    sample_interval: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    params.validate()?;
    if dt_sim <= 0.0 || sample_interval < dt_sim || t_end <= 0.0 {
        return Err(Error::InvalidArgument(
            "need dt_sim > 0, sample_interval >= dt_sim and t_end > 0".into(),
        ));
    }
    let steps_per_sample = (sample_interval / dt_sim).round() as usize;
    let n = y0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sqrt_dt = dt_sim.sqrt();

    let mut y = y0.clone();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![y.clone()];
    let total_steps = (t_end / dt_sim).round() as usize;
    for step in 1..=total_steps {
        let f = drift(&y, params, stencil, DEFAULT_Y_MIN);
        for i in 0..n {
            let dw: f64 = normal.sample(&mut rng);
            y[i] += f[i] * dt_sim + params.sigma * sqrt_dt * dw;
            if y[i] < DEFAULT_Y_MIN {
                y[i] = DEFAULT_Y_MIN;
            }
        }
        t = step as f64 * dt_sim;
        if step % steps_per_sample == 0 {
            times.push(t);
            states.push(y.clone());
        }
    }
    let _ = t;
    Ok((times, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stencil::build_stencil;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn params(n: usize, c0: f64, d0: f64) -> ModelParams {
        ModelParams {
            c0: DVector::from_element(n, c0),
            d0,
            sigma: 1e-3,
            s_meas: 1e-3,
        }
    }

    #[test]
    fn uniform_state_reduces_to_per_line_drift() {
        let n = 8;
        let s = build_stencil(n, 4, 0.1).unwrap();
        let y = DVector::from_element(n, 1.0);
        let f = drift(&y, &params(n, 1e-3, 5.0), &s, DEFAULT_Y_MIN);
        // The stencil rows sum to zero exactly in exact arithmetic; the
        // 1/dx^4 scaling leaves rounding residue of order D0 * eps / dx^4.
        let slack = 5.0 * f64::EPSILON / 0.1f64.powi(4) * 10.0;
        for i in 0..n {
            assert_relative_eq!(f[i], 1e-3, epsilon = slack);
        }
    }

    #[test]
    fn center_line_coupling_hand_value() {
        // n = 5, Y = [1,1,2,1,1], order 2, dx = 1, C0 = 0 (approximated by a
        // tiny value), D0 = 0.01: center drift = 0.01 * (1 - 4 + 1) = -0.02.
        let s = build_stencil(5, 2, 1.0).unwrap();
        let y = DVector::from_vec(vec![1.0, 1.0, 2.0, 1.0, 1.0]);
        let mut p = params(5, 1e-30, 0.01);
        p.sigma = 1.0;
        let f = drift(&y, &p, &s, DEFAULT_Y_MIN);
        assert_relative_eq!(f[2], -0.02, max_relative = 1e-9);
    }

    #[test]
    fn uncoupled_drift_is_reciprocal() {
        let s = build_stencil(5, 2, 1.0).unwrap();
        let y = DVector::from_element(5, 0.25);
        let f = drift(&y, &params(5, 2e-3, 0.0), &s, DEFAULT_Y_MIN);
        for i in 0..5 {
            assert_relative_eq!(f[i], 2e-3 / 0.25, max_relative = 1e-12);
        }
    }

    #[test]
    fn jacobian_diagonal_when_uncoupled() {
        let s = build_stencil(6, 2, 1.0).unwrap();
        let y = DVector::from_fn(6, |i, _| 0.5 + 0.1 * i as f64);
        let p = params(6, 3e-3, 0.0);
        let a = drift_jacobian(&y, &p, &s, DEFAULT_Y_MIN);
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j { -p.c0[i] / (y[i] * y[i]) } else { 0.0 };
                assert_relative_eq!(a[(i, j)], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn jacobian_equals_coupling_when_c0_tiny() {
        let s = build_stencil(8, 4, 0.2).unwrap();
        let y = DVector::from_element(8, 1e6);
        let p = params(8, 1e-12, -0.7);
        let a = drift_jacobian(&y, &p, &s, DEFAULT_Y_MIN);
        let expect = s.matrix() * -0.7;
        assert!((a - expect).amax() < 1e-12 * s.matrix().amax());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let n = 7;
        let s = build_stencil(n, 4, 0.15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let y = DVector::from_fn(n, |_, _| 0.05 + 0.9 * rng.gen::<f64>());
            let p = ModelParams {
                c0: DVector::from_fn(n, |_, _| 1e-4 + 1e-3 * rng.gen::<f64>()),
                d0: rng.gen::<f64>() * 2.0 - 1.0,
                sigma: 1e-3,
                s_meas: 1e-3,
            };
            let a = drift_jacobian(&y, &p, &s, DEFAULT_Y_MIN);
            let h = 1e-6;
            let scale = a.amax();
            for j in 0..n {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += h;
                ym[j] -= h;
                let fp = drift(&yp, &p, &s, DEFAULT_Y_MIN);
                let fm = drift(&ym, &p, &s, DEFAULT_Y_MIN);
                for i in 0..n {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    assert!(
                        (a[(i, j)] - fd).abs() <= 1e-5 * scale.max(1.0),
                        "jacobian mismatch at ({i},{j}): {} vs {}",
                        a[(i, j)],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn drift_symmetry_preserved() {
        // Symmetric state and C0 must produce a symmetric drift, which
        // requires the mirror-symmetric boundary rows.
        for order in [2usize, 4] {
            let n = 9;
            let s = build_stencil(n, order, 0.1).unwrap();
            let y = DVector::from_fn(n, |i, _| {
                let d = i as f64 - (n as f64 - 1.0) / 2.0;
                0.5 + 0.01 * d * d
            });
            let f = drift(&y, &params(n, 1e-3, -0.3), &s, DEFAULT_Y_MIN);
            // Mirrored rows accumulate rounding in a different order, so
            // allow residue of order eps / dx^4 from the scaled stencil.
            for i in 0..n {
                assert_relative_eq!(f[i], f[n - 1 - i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sde_simulation_is_seed_deterministic() {
        let s = build_stencil(5, 2, 0.2).unwrap();
        let p = params(5, 1e-3, 0.0);
        let y0 = DVector::from_element(5, 0.05);
        let (t1, a) = simulate_sde(&p, &s, &y0, 10.0, 0.01, 1.0, 7).unwrap();
        let (t2, b) = simulate_sde(&p, &s, &y0, 10.0, 0.01, 1.0, 7).unwrap();
        assert_eq!(t1, t2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }
}
