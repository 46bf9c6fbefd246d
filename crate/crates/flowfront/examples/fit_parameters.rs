//! Recovers the drift and noise parameters of the coupled front model from
//! one noisy trajectory via maximum likelihood.
//!
//! The fit is staged: each line is first fitted on its own with a scalar
//! model (fast, coupling ignored), then the joint model is polished from
//! that start.
//!
//! Run with: `cargo run --release --example fit_parameters`

use flowfront::filter::{FilterOptions, ObservationFrame};
use flowfront::mle::{estimate, prefit_lines, FitOptions};
use flowfront::model::{simulate_sde, ModelParams};
use flowfront::stencil::build_stencil;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> flowfront::Result<()> {
    let n = 8;
    let stencil = build_stencil(n, 4, 0.8 / (n as f64 - 1.0))?;
    let truth = ModelParams {
        c0: DVector::from_element(n, 6.75e-4),
        d0: -1e-6,
        sigma: 2e-3,
        s_meas: 2e-3,
    };

    // Latent SDE trajectory plus i.i.d. measurement noise.
    let y0 = DVector::from_element(n, 0.02);
    let (times, states) = simulate_sde(&truth, &stencil, &y0, 600.0, 0.05, 1.0, 7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise = Normal::new(0.0, truth.s_meas).expect("positive std");
    let frames: Vec<ObservationFrame> = times
        .iter()
        .zip(&states)
        .map(|(&t, y)| {
            let z = DVector::from_fn(n, |i, _| y[i] + noise.sample(&mut rng));
            ObservationFrame::full(t, z)
        })
        .collect();

    let filter = FilterOptions { substep: Some(1.0), ..FilterOptions::default() };
    let theta0 = prefit_lines(&frames, n, &filter, 1e-3, 400)?;
    let opts = FitOptions {
        max_evals: 2500,
        multistart: 1,
        filter,
        ..FitOptions::default()
    };
    let fit = estimate(&frames, &stencil, &theta0, &opts)?;

    println!(
        "converged: {} after {} evaluations, negloglik {:.2}",
        fit.converged, fit.evaluations, fit.negloglik
    );
    println!("\n{:>10} {:>12} {:>12} {:>10}", "parameter", "true", "fitted", "rel err");
    let row = |name: &str, t: f64, f: f64| {
        println!("{name:>10} {t:12.5e} {f:12.5e} {:9.1}%", 100.0 * (f - t).abs() / t.abs());
    };
    for i in 0..n {
        row(&format!("C0[{i}]"), truth.c0[i], fit.params.c0[i]);
    }
    println!("{:>10} {:12.5e} {:12.5e}", "D0", truth.d0, fit.params.d0);
    row("sigma", truth.sigma, fit.params.sigma);
    row("s_meas", truth.s_meas, fit.params.s_meas);
    Ok(())
}
