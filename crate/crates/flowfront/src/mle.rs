//! Maximum-likelihood estimation of the SDE parameters.
//!
//! The filter's total negative log-likelihood is minimized by a
//! derivative-free simplex search over an unconstrained reparameterization:
//! positive parameters travel through a log map, the coupling coefficient
//! passes through unchanged.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filter::{filter_pass, FilterOptions, ObservationFrame};
use crate::model::{CoupledFrontModel, ModelParams, DEFAULT_Y_MIN};
use crate::stencil::Stencil;

/// Objective value substituted when the filter fails or returns a
/// non-finite likelihood.
pub const PENALTY: f64 = 1e12;

/// Maps parameters to the unconstrained vector
/// `[ln C0_1 .. ln C0_n, D0, ln sigma, ln s_meas]`.
pub fn transform(params: &ModelParams) -> Result<DVector<f64>> {
    params.validate()?;
    let n = params.dim();
    let mut v = DVector::zeros(n + 3);
    for i in 0..n {
        v[i] = params.c0[i].ln();
    }
    v[n] = params.d0;
    v[n + 1] = params.sigma.ln();
    v[n + 2] = params.s_meas.ln();
    Ok(v)
}

/// Inverse of [`transform`] for `n` lines.
pub fn untransform(v: &DVector<f64>, n: usize) -> ModelParams {
    ModelParams {
        c0: DVector::from_fn(n, |i, _| v[i].exp()),
        d0: v[n],
        sigma: v[n + 1].exp(),
        s_meas: v[n + 2].exp(),
    }
}

/// Options for a fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_evals: usize,
    /// Simplex spread tolerance, applied to both coordinates and values.
    pub tol: f64,
    /// Number of starts; the first is `theta0` itself, the rest are jitters.
    pub multistart: usize,
    pub seed: u64,
    pub filter: FilterOptions,
    pub y_min: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            tol: 1e-6,
            multistart: 5,
            seed: 0,
            filter: FilterOptions::default(),
            y_min: DEFAULT_Y_MIN,
        }
    }
}

/// Fit outcome.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub negloglik: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Which multistart produced the winner.
    pub start_index: usize,
}

/// Negative log-likelihood of an unconstrained parameter vector; filter
/// failures and non-finite values map to [`PENALTY`].
pub fn negloglik(
    v: &DVector<f64>,
    frames: &[ObservationFrame],
    stencil: &Stencil,
    filter_opts: &FilterOptions,
    y_min: f64,
) -> f64 {
    let params = untransform(v, stencil.len());
    let model = match CoupledFrontModel::with_floor(params, stencil.clone(), y_min) {
        Ok(m) => m,
        Err(_) => return PENALTY,
    };
    match filter_pass(frames, &model, None, filter_opts) {
        Ok(pass) if pass.total_negloglik.is_finite() => pass.total_negloglik,
        _ => PENALTY,
    }
}

struct SimplexOutcome {
    x: DVector<f64>,
    value: f64,
    evaluations: usize,
    converged: bool,
}

/// Nelder–Mead with the standard coefficients (reflection 1, expansion 2,
/// contraction 0.5, shrink 0.5).
fn nelder_mead<F: FnMut(&DVector<f64>) -> f64>(
    mut f: F,
    x0: &DVector<f64>,
    initial_step: &DVector<f64>,
    max_evals: usize,
    tol: f64,
) -> SimplexOutcome {
    let dim = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &DVector<f64>, evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.clone(), v0));
    for i in 0..dim {
        let mut x = x0.clone();
        x[i] += initial_step[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut converged = false;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread_v = simplex[dim].1 - simplex[0].1;
        let mut spread_x = 0.0f64;
        for i in 0..dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (x, _) in &simplex {
                lo = lo.min(x[i]);
                hi = hi.max(x[i]);
            }
            spread_x = spread_x.max(hi - lo);
        }
        if spread_v.abs() < tol && spread_x < tol {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = DVector::zeros(dim);
        for (x, _) in simplex.iter().take(dim) {
            centroid += x;
        }
        centroid /= dim as f64;
        let worst = simplex[dim].clone();

        let reflected = &centroid + (&centroid - &worst.0);
        let fr = eval(&reflected, &mut evals);
        if fr < simplex[0].1 {
            let expanded = &centroid + (&reflected - &centroid) * 2.0;
            let fe = eval(&expanded, &mut evals);
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
        } else {
            let contracted = if fr < worst.1 {
                &centroid + (&reflected - &centroid) * 0.5
            } else {
                &centroid + (&worst.0 - &centroid) * 0.5
            };
            let fc = eval(&contracted, &mut evals);
            if fc < worst.1.min(fr) {
                simplex[dim] = (contracted, fc);
            } else {
                // Shrink towards the best vertex.
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    entry.0 = &best + (&entry.0 - &best) * 0.5;
                    entry.1 = eval(&entry.0, &mut evals);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    SimplexOutcome {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        evaluations: evals,
        converged,
    }
}

fn jitter_start(theta0: &ModelParams, rng: &mut ChaCha8Rng) -> ModelParams {
    // +/-50% multiplicative on positive parameters, additive on D0.
    let mul = |rng: &mut ChaCha8Rng| 1.0 + (rng.gen::<f64>() - 0.5);
    ModelParams {
        c0: theta0.c0.map(|c| {
            let f = mul(rng);
            c * f
        }),
        d0: theta0.d0 + (2.0 * rng.gen::<f64>() - 1.0) * (theta0.d0.abs() + 3.0e-5),
        sigma: theta0.sigma * mul(rng),
        s_meas: theta0.s_meas * mul(rng),
    }
}

/// Minimizes the filter negative log-likelihood from `theta0`, optionally
/// with jittered multistarts. Deterministic in `opts.seed`.
pub fn estimate(
    frames: &[ObservationFrame],
    stencil: &Stencil,
    theta0: &ModelParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    theta0.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no observation frames to fit".into()));
    }
    if opts.multistart == 0 {
        return Err(Error::InvalidArgument("multistart count must be at least 1".into()));
    }
    let n = stencil.len();
    if theta0.dim() != n {
        return Err(Error::InvalidArgument(format!(
            "theta0 has {} lines but the stencil spans {n}",
            theta0.dim()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(SimplexOutcome, usize)> = None;
    let mut total_evals = 0usize;
    for start in 0..opts.multistart {
        let start_params = if start == 0 { theta0.clone() } else { jitter_start(theta0, &mut rng) };
        let mut x0 = transform(&start_params)?;

        // Restarted Nelder–Mead: a collapsed simplex often stalls inside a
        // curved valley, so rebuild it around the incumbent with a smaller
        // step until the evaluation budget is spent or a restart stops
        // paying off.
        let mut remaining = opts.max_evals;
        // Log-mapped coordinates move comfortably in steps of 0.25; the
        // coupling coefficient is untransformed and physically tiny, so its
        // simplex leg must be far smaller to keep the probes well scaled.
        // A well-scaled D0 probe perturbs the coupling drift by a few
        // percent of the front position, so the leg shrinks with the
        // stencil's row magnitude (which grows like 1/dx^order).
        let g_scale = stencil
            .matrix()
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        let d0_step = (0.05 / g_scale).max(theta0.d0.abs());
        let mut step = DVector::from_element(x0.len(), 0.25);
        step[n] = d0_step;
        let mut outcome: Option<SimplexOutcome> = None;
        let mut total = 0usize;
        while remaining > x0.len() + 1 {
            let round = nelder_mead(
                |v| negloglik(v, frames, stencil, &opts.filter, opts.y_min),
                &x0,
                &step,
                remaining,
                opts.tol,
            );
            total += round.evaluations;
            remaining = remaining.saturating_sub(round.evaluations);
            let improved = outcome.as_ref().map_or(true, |prev| round.value < prev.value - 1e-3);
            let keep = outcome.as_ref().map_or(true, |prev| round.value < prev.value);
            x0 = round.x.clone();
            if keep {
                outcome = Some(round);
            }
            if !improved {
                break;
            }
            step.scale_mut(0.5);
        }
        let mut outcome = outcome.expect("at least one optimizer round");
        outcome.evaluations = total;
        total_evals += outcome.evaluations;
        let better = match &best {
            Some((b, _)) => outcome.value < b.value,
            None => true,
        };
        if better {
            best = Some((outcome, start));
        }
    }

    let (winner, start_index) = best.expect("at least one start");
    Ok(FitResult {
        params: untransform(&winner.x, n),
        negloglik: winner.value,
        evaluations: total_evals,
        converged: winner.converged,
        start_index,
    })
}

/// Data-driven starting point: per-line `C0` from the square-law growth of
/// the front, measurement noise from the local roughness of the series.
pub fn initial_guess(frames: &[ObservationFrame], n: usize) -> ModelParams {
    // Without coupling, Y² grows linearly with slope 2·C0, so an ordinary
    // least-squares line through (t, z²) averages the noise out.
    let mut c0 = DVector::from_element(n, 1e-4);
    for i in 0..n {
        let pts: Vec<(f64, f64)> = frames
            .iter()
            .filter(|f| f.mask[i] && f.z[i].is_finite())
            .map(|f| (f.t, f.z[i] * f.z[i]))
            .collect();
        if pts.len() < 2 {
            continue;
        }
        let m = pts.len() as f64;
        let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let mean_q = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let cov: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_q)).sum();
        let var: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.0 - mean_t)).sum();
        if var > 0.0 {
            c0[i] = (cov / var / 2.0).max(1e-6);
        }
    }

    // Roughness estimate: residual of the midpoint predictor has variance
    // 1.5 s² for white noise on a smooth trend.
    let mut residuals = Vec::new();
    for i in 0..n {
        for w in frames.windows(3) {
            if w.iter().all(|f| f.mask[i] && f.z[i].is_finite()) {
                residuals.push(w[1].z[i] - 0.5 * (w[0].z[i] + w[2].z[i]));
            }
        }
    }
    let s_meas = if residuals.len() >= 8 {
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (residuals.len() - 1) as f64;
        (var / 1.5).sqrt().max(1e-4)
    } else {
        5e-3
    };

    ModelParams { c0, d0: 0.0, sigma: 1e-3, s_meas }
}

/// Uncoupled single-line model used by the staged prefit.
struct ScalarLine {
    c0: f64,
    sigma: f64,
    s_meas: f64,
    y_min: f64,
}

impl crate::model::ProcessModel for ScalarLine {
    fn dim(&self) -> usize {
        1
    }

    fn drift(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.c0 / y[0].max(self.y_min))
    }

    fn drift_jacobian(&self, y: &DVector<f64>) -> nalgebra::DMatrix<f64> {
        let d = if y[0] > self.y_min { -self.c0 / (y[0] * y[0]) } else { 0.0 };
        nalgebra::DMatrix::from_element(1, 1, d)
    }

    fn diffusion_std(&self) -> f64 {
        self.sigma
    }

    fn measurement_std(&self) -> f64 {
        self.s_meas
    }

    fn clamp_state(&self, y: &mut DVector<f64>) {
        if y[0] < self.y_min {
            y[0] = self.y_min;
        }
    }
}

/// Staged starting point: each line is fitted on its own with the coupling
/// ignored, which turns one hard joint search into `n` easy scalar ones.
/// The shared noise levels are taken as medians over the per-line fits.
///
/// The result is meant to seed [`estimate`]; it is deterministic and much
/// closer to the optimum than [`initial_guess`] when the coupling is weak.
pub fn prefit_lines(
    frames: &[ObservationFrame],
    n: usize,
    filter_opts: &FilterOptions,
    y_min: f64,
    max_evals_per_line: usize,
) -> Result<ModelParams> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no observation frames to prefit".into()));
    }
    let guess = initial_guess(frames, n);
    let mut c0 = guess.c0.clone();
    let mut sigmas = Vec::with_capacity(n);
    let mut noises = Vec::with_capacity(n);

    let mut line_noise = vec![f64::NAN; n];
    for i in 0..n {
        let line_frames: Vec<ObservationFrame> = frames
            .iter()
            .map(|f| ObservationFrame {
                t: f.t,
                z: DVector::from_element(1, f.z[i]),
                mask: vec![f.mask[i] && f.z[i].is_finite()],
            })
            .collect();
        if line_frames.iter().filter(|f| f.mask[0]).count() < 4 {
            continue;
        }

        let objective = |v: &DVector<f64>| -> f64 {
            let model = ScalarLine {
                c0: v[0].exp(),
                sigma: v[1].exp(),
                s_meas: v[2].exp(),
                y_min,
            };
            match filter_pass(&line_frames, &model, None, filter_opts) {
                Ok(pass) if pass.total_negloglik.is_finite() => pass.total_negloglik,
                _ => PENALTY,
            }
        };
        let x0 = DVector::from_vec(vec![
            guess.c0[i].ln(),
            guess.sigma.ln(),
            guess.s_meas.ln(),
        ]);
        let steps = DVector::from_element(3, 0.5);
        let outcome = nelder_mead(objective, &x0, &steps, max_evals_per_line, 1e-7);
        if outcome.value < PENALTY {
            c0[i] = outcome.x[0].exp();
            line_noise[i] = outcome.x[2].exp();
            sigmas.push(outcome.x[1].exp());
            noises.push(outcome.x[2].exp());
        }
    }

    // A line whose own scalar fit needs a grossly out-of-family noise level
    // is either dark or corrupted; its drift constant is untrustworthy, so
    // borrow it from the nearest healthy neighbours instead (the front is
    // spatially smooth, which is the premise of the coupling term).
    let mut family: Vec<f64> = line_noise.iter().copied().filter(|v| v.is_finite()).collect();
    if family.len() >= 3 {
        family.sort_by(f64::total_cmp);
        let median_noise = family[family.len() / 2];
        let trusted: Vec<usize> = (0..n)
            .filter(|&i| line_noise[i].is_finite() && line_noise[i] <= 3.0 * median_noise)
            .collect();
        if trusted.len() >= 2 {
            for i in 0..n {
                if trusted.contains(&i) {
                    continue;
                }
                let left = trusted.iter().copied().filter(|&j| j < i).max();
                let right = trusted.iter().copied().filter(|&j| j > i).min();
                c0[i] = match (left, right) {
                    (Some(l), Some(r)) => {
                        let w = (i - l) as f64 / (r - l) as f64;
                        (1.0 - w) * c0[l] + w * c0[r]
                    }
                    (Some(l), None) => c0[l],
                    (None, Some(r)) => c0[r],
                    (None, None) => c0[i],
                };
            }
        }
    }

    let median = |v: &mut Vec<f64>, fallback: f64| -> f64 {
        if v.is_empty() {
            fallback
        } else {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        }
    };
    Ok(ModelParams {
        c0,
        d0: 0.0,
        sigma: median(&mut sigmas, guess.sigma),
        s_meas: median(&mut noises, guess.s_meas),
    })
}
