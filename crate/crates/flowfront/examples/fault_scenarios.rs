//! Injects the three supported sensor-fault scenarios into a clean
//! measurement sequence and reports what each one changes.
//!
//! Run with: `cargo run --example fault_scenarios`

use flowfront::faults::{apply_scenario, FaultKind, FaultScenario};
use flowfront::filter::ObservationFrame;
use nalgebra::DVector;

fn main() -> flowfront::Result<()> {
    let n = 8;
    let frames: Vec<ObservationFrame> = (0..200)
        .map(|k| {
            let t = k as f64;
            let z = DVector::from_fn(n, |i, _| 0.03 * (t + 1.0).sqrt() * (1.0 + 0.02 * i as f64));
            ObservationFrame::full(t, z)
        })
        .collect();

    let scenarios = [
        FaultScenario {
            kind: FaultKind::DropSensor,
            sensors: vec![3],
            ..FaultScenario::none()
        },
        FaultScenario {
            kind: FaultKind::PartialDropout,
            sensors: vec![3, 5, 7],
            fraction: 0.7,
            seed: 11,
            ..FaultScenario::none()
        },
        FaultScenario {
            kind: FaultKind::Bias,
            sensors: vec![3],
            fraction: 0.5,
            bias: 0.2,
            seed: 11,
            ..FaultScenario::none()
        },
    ];

    for scenario in &scenarios {
        let faulty = apply_scenario(&frames, scenario)?;
        let missing: usize = faulty
            .iter()
            .map(|f| f.mask.iter().filter(|&&m| !m).count())
            .sum();
        let biased: usize = faulty
            .iter()
            .zip(&frames)
            .map(|(a, b)| a.z.iter().zip(b.z.iter()).filter(|(x, y)| x != y).count())
            .sum();
        println!(
            "{:<32} masked entries: {:>4}  shifted entries: {:>4}",
            scenario.label(),
            missing,
            biased
        );
    }
    Ok(())
}
