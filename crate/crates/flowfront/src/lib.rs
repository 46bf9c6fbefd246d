//! Flow-front simulation and grey-box estimation for vacuum-infusion
//! moulding.
//!
//! The crate covers the full pipeline for tracking the resin flow-front in
//! a rectangular mould:
//!
//! * [`pde`] — a Darcy-flow pressure solver that manufactures synthetic
//!   flow-front measurement data on a regular grid;
//! * [`stencil`] / [`model`] — the coupled stochastic model of the front
//!   over parallel line sensors, with 2nd- and 4th-order spatial coupling;
//! * [`filter`] — a continuous-discrete extended Kalman filter with
//!   permutation-based missing-data updates and per-step likelihood terms;
//! * [`mle`] — maximum-likelihood parameter estimation by simplex search;
//! * [`faults`] — deterministic sensor-fault injection (full dropout,
//!   partial dropout, bias);
//! * [`eval`] — one-step-ahead RMSE scoring and a seeded sweep harness;
//! * [`config`] / [`io`] — the JSON config and CSV surfaces shared with the
//!   `flowfront` command-line driver.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod config;
pub mod error;
pub mod eval;
pub mod faults;
pub mod filter;
pub mod io;
pub mod linalg;
pub mod mle;
pub mod model;
pub mod pde;
pub mod stencil;

pub use error::{Error, Result};
