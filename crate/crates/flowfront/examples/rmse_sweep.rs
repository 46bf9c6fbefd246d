//! Runs a miniature evaluation sweep — simulate, corrupt, fit, score — and
//! prints the resulting one-step-ahead prediction errors as CSV.
//!
//! Run with: `cargo run --example rmse_sweep`

use flowfront::eval::{run_sweep, SimSetup, SweepConfig};
use flowfront::faults::{FaultKind, FaultScenario};
use flowfront::io::sweep_to_csv;
use flowfront::mle::FitOptions;
use flowfront::pde::{build_coefficient_field, GridSpec, DEFAULT_C0};

fn main() -> flowfront::Result<()> {
    let grid = GridSpec::new(0.8, 0.9, 16, 32)?;
    let sim = SimSetup {
        grid,
        material: build_coefficient_field(grid, 0.5, DEFAULT_C0)?,
        p0: 1e5,
        p_th: 1e3,
        dt_pde: 0.5,
        t_end: 300.0,
    };

    // Both stencil orders, with and without a dead sensor.
    let sweep = SweepConfig {
        sample_intervals: vec![5.0],
        noise_stds: vec![0.01],
        sensor_counts: vec![8],
        orders: vec![2, 4],
        scenarios: vec![
            FaultScenario::none(),
            FaultScenario {
                kind: FaultKind::DropSensor,
                sensors: vec![3],
                ..FaultScenario::none()
            },
        ],
        replicates: 2,
        master_seed: 1,
    };

    // A light optimizer budget keeps the example quick; raise `max_evals`
    // and `multistart` for production-quality fits.
    let fit_opts = FitOptions {
        max_evals: 150,
        multistart: 1,
        ..FitOptions::default()
    };

    let records = run_sweep(&sim, &sweep, &fit_opts)?;
    print!("{}", sweep_to_csv(&records));
    Ok(())
}
