//! JSON run configuration.
//!
//! Every section is optional and falls back to documented defaults; unknown
//! keys are rejected. The same document drives all CLI subcommands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{SimSetup, SweepConfig};
use crate::faults::FaultScenario;
use crate::filter::FilterOptions;
use crate::mle::FitOptions;
use crate::pde::{build_coefficient_field, GridSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    #[serde(rename = "Lx")]
    pub lx: f64,
    #[serde(rename = "Ly")]
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { lx: 0.8, ly: 0.9, nx: 64, ny: 128 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialSection {
    #[serde(rename = "A")]
    pub a: f64,
    pub c0: f64,
    pub phi: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub rho: f64,
    pub g: f64,
    pub p0: f64,
    pub p_th: f64,
}

impl Default for MaterialSection {
    fn default() -> Self {
        Self {
            a: 0.5,
            c0: crate::pde::DEFAULT_C0,
            phi: 0.5,
            h: 0.01,
            rho: 1100.0,
            g: 9.81,
            p0: 1e5,
            p_th: 1e3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt_pde: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub sample_interval: f64,
    /// Measurement noise added by the `simulate` command; 0 keeps the
    /// series clean.
    pub noise_std: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { dt_pde: 0.5, t_end: 900.0, sample_interval: 1.0, noise_std: 0.0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSection {
    /// Number of line sensors kept; `null` keeps every grid column.
    pub n_sensors: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub order: usize,
    #[serde(rename = "Y_min")]
    pub y_min: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { order: 4, y_min: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    #[serde(rename = "Ps")]
    pub ps: f64,
    pub substep: Option<f64>,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self { ps: 10.0, substep: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MleSection {
    pub multistart: usize,
    pub max_evals: usize,
    pub tol: f64,
}

impl Default for MleSection {
    fn default() -> Self {
        Self { multistart: 5, max_evals: 2000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub sample_intervals: Vec<f64>,
    pub noise_stds: Vec<f64>,
    pub sensor_counts: Vec<usize>,
    pub orders: Vec<usize>,
    pub scenarios: Vec<FaultScenario>,
    pub replicates: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sample_intervals: vec![1.0, 5.0, 20.0],
            noise_stds: vec![0.002, 0.01, 0.05],
            sensor_counts: vec![5, 8, 12],
            orders: vec![2, 4],
            scenarios: vec![FaultScenario::none()],
            replicates: 5,
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSection,
    pub material: MaterialSection,
    pub sim: SimSection,
    pub sensors: SensorSection,
    pub model: ModelSection,
    pub filter: FilterSection,
    pub mle: MleSection,
    pub scenario: FaultScenario,
    pub sweep: SweepSection,
    pub seed: u64,
}

impl RunConfig {
    /// Parses and validates a JSON document, reporting the JSON-pointer
    /// path of the offending key on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = format!("/{}", e.path().to_string().replace('.', "/"));
            Error::Config(format!("{} (at {pointer})", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.into()))
            }
        };
        check(self.grid.lx > 0.0 && self.grid.ly > 0.0, "grid lengths must be positive")?;
        check(self.grid.nx >= 2 && self.grid.ny >= 2, "grid needs at least 2 cells per axis")?;
        check((0.0..1.0).contains(&self.material.a), "material A must be in [0, 1)")?;
        check(self.material.c0 > 0.0, "material c0 must be positive")?;
        check(
            self.material.phi > 0.0 && self.material.phi <= 1.0,
            "material phi must be in (0, 1]",
        )?;
        check(self.material.h > 0.0, "material H must be positive")?;
        check(self.material.rho > 0.0 && self.material.g > 0.0, "rho and g must be positive")?;
        check(self.material.p0 > 0.0, "p0 must be positive")?;
        check(self.material.p_th > 0.0, "p_th must be positive")?;
        check(self.sim.dt_pde > 0.0, "dt_pde must be positive")?;
        check(self.sim.t_end > 0.0, "T must be positive")?;
        check(
            self.sim.sample_interval >= self.sim.dt_pde,
            "sample_interval must be at least dt_pde",
        )?;
        check(self.sim.noise_std >= 0.0, "noise_std must be non-negative")?;
        check(
            self.model.order == 2 || self.model.order == 4,
            "model order must be 2 or 4",
        )?;
        check(self.model.y_min > 0.0, "Y_min must be positive")?;
        check(self.filter.ps >= 1.0, "Ps must be at least 1")?;
        check(self.mle.multistart >= 1, "mle multistart must be at least 1")?;
        check(self.mle.max_evals >= 1, "mle max_evals must be at least 1")?;
        if let Some(n) = self.sensors.n_sensors {
            check(
                n >= 2 && n <= self.grid.nx + 1,
                "n_sensors must be in [2, nx+1]",
            )?;
        }
        check(!self.sweep.sample_intervals.is_empty(), "sweep sample_intervals must be non-empty")?;
        check(!self.sweep.noise_stds.is_empty(), "sweep noise_stds must be non-empty")?;
        check(!self.sweep.sensor_counts.is_empty(), "sweep sensor_counts must be non-empty")?;
        check(!self.sweep.orders.is_empty(), "sweep orders must be non-empty")?;
        check(!self.sweep.scenarios.is_empty(), "sweep scenarios must be non-empty")?;
        check(self.sweep.replicates >= 1, "sweep replicates must be at least 1")?;
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.lx, self.grid.ly, self.grid.nx, self.grid.ny)
    }

    /// PDE data-generation setup built from the grid and material sections.
    pub fn sim_setup(&self) -> Result<SimSetup> {
        let grid = self.grid_spec()?;
        let mut material = build_coefficient_field(grid, self.material.a, self.material.c0)?;
        material.porosity = self.material.phi;
        material.thickness = self.material.h;
        material.density = self.material.rho;
        material.gravity = self.material.g;
        Ok(SimSetup {
            grid,
            material,
            p0: self.material.p0,
            p_th: self.material.p_th,
            dt_pde: self.sim.dt_pde,
            t_end: self.sim.t_end,
        })
    }

    pub fn filter_options(&self) -> FilterOptions {
        FilterOptions { ps: self.filter.ps, substep: self.filter.substep }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_evals: self.mle.max_evals,
            tol: self.mle.tol,
            multistart: self.mle.multistart,
            seed: self.seed,
            filter: self.filter_options(),
            y_min: self.model.y_min,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            sample_intervals: self.sweep.sample_intervals.clone(),
            noise_stds: self.sweep.noise_stds.clone(),
            sensor_counts: self.sweep.sensor_counts.clone(),
            orders: self.sweep.orders.clone(),
            scenarios: self.sweep.scenarios.clone(),
            replicates: self.sweep.replicates,
            master_seed: self.seed,
        }
    }
}
