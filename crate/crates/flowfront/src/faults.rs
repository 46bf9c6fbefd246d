//! Deterministic fault-injection transforms on measurement sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::ObservationFrame;

/// Which fault to inject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// No transformation.
    None,
    /// Listed sensors masked at every time step.
    DropSensor,
    /// A seeded fraction of each listed sensor's frames masked.
    PartialDropout,
    /// A seeded fraction of each listed sensor's frames shifted by a bias.
    Bias,
}

/// A fault scenario over a frame sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultScenario {
    pub kind: FaultKind,
    #[serde(default)]
    pub sensors: Vec<usize>,
    /// Fraction of frames affected; used by partial_dropout and bias.
    #[serde(default)]
    pub fraction: f64,
    /// Additive offset in meters; used by bias.
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FaultScenario {
    fn default() -> Self {
        Self::none()
    }
}

impl FaultScenario {
    pub fn none() -> Self {
        Self { kind: FaultKind::None, sensors: Vec::new(), fraction: 0.0, bias: 0.0, seed: 0 }
    }

    /// Short label used in sweep CSVs.
    pub fn label(&self) -> String {
        match self.kind {
            FaultKind::None => "none".into(),
            FaultKind::DropSensor => format!("drop{}", join(&self.sensors)),
            FaultKind::PartialDropout => {
                format!("dropout{}f{}", join(&self.sensors), self.fraction)
            }
            FaultKind::Bias => format!("bias{}b{}f{}", join(&self.sensors), self.bias, self.fraction),
        }
    }

    /// Whether the fault is still present in the stream the fitted model is
    /// scored on. Dropped or intermittent sensors stay dark at evaluation
    /// time; a bias episode corrupts the estimation campaign, after which
    /// the model faces the nominal measurement stream.
    pub fn persists_at_evaluation(&self) -> bool {
        !matches!(self.kind, FaultKind::Bias)
    }
}

fn join(sensors: &[usize]) -> String {
    sensors.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("-")
}

/// Picks `k` distinct frame indices out of `n`, deterministic per
/// (seed, sensor) pair. Partial Fisher–Yates over the index range.
fn pick_frames(n: usize, k: usize, seed: u64, sensor: usize) -> Vec<usize> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (sensor as u64).wrapping_mul(0x9e3779b97f4a7c15));
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = i + rand::Rng::gen_range(&mut rng, 0..n - i);
        indices.swap(i, j);
    }
    indices.truncate(k);
    indices
}

/// Applies a fault scenario to a clean frame sequence.
///
/// The input must carry full masks; the clean frames are never mutated.
/// Affected frame counts are exactly `floor(fraction · N)` per listed
/// sensor, sampled without replacement.
pub fn apply_scenario(
    frames: &[ObservationFrame],
    scenario: &FaultScenario,
) -> Result<Vec<ObservationFrame>> {
    if frames.iter().any(|f| f.mask.iter().any(|&m| !m)) {
        return Err(Error::InvalidArgument(
            "fault injection expects frames with full masks".into(),
        ));
    }
    let n_sensors = frames.first().map(|f| f.z.len()).unwrap_or(0);
    if let Some(&bad) = scenario.sensors.iter().find(|&&s| s >= n_sensors) {
        return Err(Error::InvalidArgument(format!(
            "scenario sensor index {bad} out of range for {n_sensors} sensors"
        )));
    }
    if !(0.0..=1.0).contains(&scenario.fraction) {
        return Err(Error::InvalidArgument(format!(
            "scenario fraction must be in [0, 1], got {}",
            scenario.fraction
        )));
    }

    let mut out: Vec<ObservationFrame> = frames.to_vec();
    match scenario.kind {
        FaultKind::None => {}
        FaultKind::DropSensor => {
            for frame in &mut out {
                for &s in &scenario.sensors {
                    frame.mask[s] = false;
                }
            }
        }
        FaultKind::PartialDropout => {
            let count = (scenario.fraction * frames.len() as f64).floor() as usize;
            for &s in &scenario.sensors {
                for idx in pick_frames(frames.len(), count, scenario.seed, s) {
                    out[idx].mask[s] = false;
                }
            }
        }
        FaultKind::Bias => {
            let count = (scenario.fraction * frames.len() as f64).floor() as usize;
            for &s in &scenario.sensors {
                for idx in pick_frames(frames.len(), count, scenario.seed, s) {
                    out[idx].z[s] += scenario.bias;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn clean_frames(n_frames: usize, n_sensors: usize) -> Vec<ObservationFrame> {
        (0..n_frames)
            .map(|k| {
                ObservationFrame::full(
                    k as f64,
                    DVector::from_fn(n_sensors, |i, _| 0.1 * k as f64 + 0.01 * i as f64),
                )
            })
            .collect()
    }

    #[test]
    fn drop_sensor_masks_everywhere() {
        let frames = clean_frames(50, 8);
        let scenario = FaultScenario {
            kind: FaultKind::DropSensor,
            sensors: vec![3],
            ..FaultScenario::none()
        };
        let out = apply_scenario(&frames, &scenario).unwrap();
        for (orig, new) in frames.iter().zip(&out) {
            assert!(!new.mask[3]);
            for i in (0..8).filter(|&i| i != 3) {
                assert!(new.mask[i]);
                assert_eq!(new.z[i], orig.z[i]);
            }
        }
    }

    #[test]
    fn partial_dropout_exact_counts() {
        let frames = clean_frames(600, 8);
        let scenario = FaultScenario {
            kind: FaultKind::PartialDropout,
            sensors: vec![3, 5, 7],
            fraction: 0.7,
            seed: 12,
            ..FaultScenario::none()
        };
        let out = apply_scenario(&frames, &scenario).unwrap();
        for &s in &[3usize, 5, 7] {
            let masked = out.iter().filter(|f| !f.mask[s]).count();
            assert_eq!(masked, 420);
        }
        for s in [0usize, 1, 2, 4, 6] {
            assert!(out.iter().all(|f| f.mask[s]));
        }
    }

    #[test]
    fn bias_exact_counts_and_values() {
        let frames = clean_frames(600, 8);
        let scenario = FaultScenario {
            kind: FaultKind::Bias,
            sensors: vec![3],
            fraction: 0.5,
            bias: 0.2,
            seed: 1,
            ..FaultScenario::none()
        };
        let out = apply_scenario(&frames, &scenario).unwrap();
        let mut shifted = 0;
        for (orig, new) in frames.iter().zip(&out) {
            assert!(new.mask[3]);
            let d = new.z[3] - orig.z[3];
            if d != 0.0 {
                assert!((d - 0.2).abs() < 1e-12);
                shifted += 1;
            }
        }
        assert_eq!(shifted, 300);
    }

    #[test]
    fn zero_fraction_is_identity() {
        let frames = clean_frames(40, 5);
        for kind in [FaultKind::PartialDropout, FaultKind::Bias] {
            let scenario = FaultScenario {
                kind,
                sensors: vec![1, 2],
                fraction: 0.0,
                bias: 0.3,
                seed: 5,
            };
            let out = apply_scenario(&frames, &scenario).unwrap();
            for (orig, new) in frames.iter().zip(&out) {
                assert_eq!(orig.z, new.z);
                assert_eq!(orig.mask, new.mask);
            }
        }
    }

    #[test]
    fn seed_determinism_and_variation() {
        let frames = clean_frames(100, 6);
        let mk = |seed| FaultScenario {
            kind: FaultKind::PartialDropout,
            sensors: vec![2],
            fraction: 0.3,
            seed,
            ..FaultScenario::none()
        };
        let a = apply_scenario(&frames, &mk(7)).unwrap();
        let b = apply_scenario(&frames, &mk(7)).unwrap();
        let c = apply_scenario(&frames, &mk(8)).unwrap();
        let masks = |fs: &[ObservationFrame]| fs.iter().map(|f| f.mask[2]).collect::<Vec<_>>();
        assert_eq!(masks(&a), masks(&b));
        assert_ne!(masks(&a), masks(&c));
        assert_eq!(
            c.iter().filter(|f| !f.mask[2]).count(),
            a.iter().filter(|f| !f.mask[2]).count()
        );
    }

    #[test]
    fn invalid_sensor_rejected() {
        let frames = clean_frames(10, 4);
        let scenario = FaultScenario {
            kind: FaultKind::DropSensor,
            sensors: vec![4],
            ..FaultScenario::none()
        };
        assert!(apply_scenario(&frames, &scenario).is_err());
    }
}
