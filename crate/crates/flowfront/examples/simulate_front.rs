//! Simulates resin infusion on a coarse mould grid and prints the flow-front
//! position of a few line sensors over time.
//!
//! Run with: `cargo run --example simulate_front`

use flowfront::pde::{build_coefficient_field, select_lines, simulate, GridSpec, DEFAULT_C0};

fn main() -> flowfront::Result<()> {
    // A quarter-resolution grid keeps this example fast; the physics is the
    // same as on the full 64x128 mould.
    let grid = GridSpec::new(0.8, 0.9, 16, 32)?;
    let heterogeneity = 0.5;
    let field = build_coefficient_field(grid, heterogeneity, DEFAULT_C0)?;

    let p0 = 1e5; // inlet pressure, Pa
    let p_th = 1e3; // wetting threshold for the front extraction, Pa
    let dt_pde = 0.5; // solver step, s
    let t_end = 900.0;
    let sample_interval = 30.0;

    let series = simulate(grid, &field, p0, p_th, dt_pde, t_end, sample_interval)?;
    let sensors = select_lines(&series, 5)?;

    println!("columns kept: {:?}", sensors.columns);
    println!("{:>8} {:>10} {:>10} {:>10} {:>10} {:>10}", "t [s]", "y0", "y1", "y2", "y3", "y4");
    for (t, front) in sensors.times.iter().zip(&sensors.fronts) {
        print!("{t:8.1}");
        for z in front {
            print!(" {z:10.4}");
        }
        println!();
    }

    let last = sensors.fronts.last().expect("at least one sample");
    println!(
        "\nfinal fill fraction: {:.1}%",
        100.0 * last.iter().sum::<f64>() / (last.len() as f64 * grid.ly)
    );
    Ok(())
}
