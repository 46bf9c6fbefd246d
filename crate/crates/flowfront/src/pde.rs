//! Darcy-flow pressure solver and synthetic flow-front data generation.
//!
//! The pressure PDE `(dh/dp) ṗ = ∇·(κφH/μ ∇p)` is discretized on a regular
//! vertex grid with a 5-point finite-volume scheme (harmonic-mean face
//! transmissibilities) and time-marched with a semi-implicit Euler step:
//! `dh/dp` is frozen at the previous step, the divergence acts on the new
//! pressure. Fronts are extracted per grid column from the threshold rule
//! `Z_l = Ly Σ_K max(min(p, p_th), 0) / (p_th (ny+1))`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::conjugate_gradient;

/// Rectangular mould grid. Vertices are `(nx+1) × (ny+1)`, the inlet is the
/// `y = 0` row and the outlet the `y = Ly` row.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::InvalidArgument("grid lengths must be positive".into()));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument("need at least 2 cells per direction".into()));
        }
        Ok(Self { lx, ly, nx, ny })
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Vertex counts along x / y.
    pub fn vx(&self) -> usize {
        self.nx + 1
    }

    pub fn vy(&self) -> usize {
        self.ny + 1
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy()
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.vx() + i
    }
}

/// Spatially varying `κ/μ` plus the physical constants of the mould.
#[derive(Debug, Clone)]
pub struct MaterialField {
    pub grid: GridSpec,
    /// Vertex-indexed `κ/μ` in m²/(Pa·s), row-major with x fastest.
    pub kappa_over_mu: Vec<f64>,
    /// Porosity, in (0, 1].
    pub porosity: f64,
    /// Cross-sectional thickness in m.
    pub thickness: f64,
    /// Fluid density in kg/m³.
    pub density: f64,
    /// Gravitational acceleration in m/s².
    pub gravity: f64,
    /// Heterogeneity amplitude used to build the field.
    pub heterogeneity: f64,
    /// Baseline `κ/μ` in m²/(Pa·s).
    pub c0: f64,
}

/// Default physical constants (the source material gives none).
pub const DEFAULT_POROSITY: f64 = 0.5;
pub const DEFAULT_THICKNESS: f64 = 0.01;
pub const DEFAULT_DENSITY: f64 = 1100.0;
pub const DEFAULT_GRAVITY: f64 = 9.81;
/// Baseline `κ/μ` calibrated so the homogeneous fill time at `p0 = 1e5` Pa
/// over `Ly = 0.9` m is about 600 s.
pub const DEFAULT_C0: f64 = 6.75e-9;

/// Builds `κ/μ(x, y) = c0 / ((1 - A cos(2πx/Lx))(1 - A cos(2πy/Ly)))` on the
/// vertices, with default physical constants.
pub fn build_coefficient_field(grid: GridSpec, a: f64, c0: f64) -> Result<MaterialField> {
    if !(0.0..1.0).contains(&a) {
        return Err(Error::InvalidArgument(format!(
            "heterogeneity amplitude must be in [0, 1), got {a}"
        )));
    }
    if !(c0 > 0.0) {
        return Err(Error::InvalidArgument(format!("baseline c0 must be positive, got {c0}")));
    }
    let tau = std::f64::consts::TAU;
    let mut field = Vec::with_capacity(grid.vx() * grid.vy());
    for j in 0..grid.vy() {
        let fy = 1.0 - a * (tau * grid.y(j) / grid.ly).cos();
        for i in 0..grid.vx() {
            let fx = 1.0 - a * (tau * grid.x(i) / grid.lx).cos();
            field.push(c0 / (fx * fy));
        }
    }
    Ok(MaterialField {
        grid,
        kappa_over_mu: field,
        porosity: DEFAULT_POROSITY,
        thickness: DEFAULT_THICKNESS,
        density: DEFAULT_DENSITY,
        gravity: DEFAULT_GRAVITY,
        heterogeneity: a,
        c0,
    })
}

/// `dh/dp`: `1/(ρg)` while the gap is partially filled (`p < ρgφH`), zero
/// once completely filled. The exact threshold takes the filled branch.
pub fn dh_dp(p: f64, field: &MaterialField) -> f64 {
    let fill = field.density * field.gravity * field.porosity * field.thickness;
    if p < fill {
        1.0 / (field.density * field.gravity)
    } else {
        0.0
    }
}

/// Discrete pressure state on the full vertex grid.
#[derive(Debug, Clone)]
pub struct PressureField {
    pub p: Vec<f64>,
    pub t: f64,
}

impl PressureField {
    /// Empty mould: zero pressure everywhere except the inlet row.
    pub fn initial(grid: &GridSpec, p0: f64) -> Self {
        let mut p = vec![0.0; grid.vx() * grid.vy()];
        for i in 0..grid.vx() {
            p[grid.idx(i, 0)] = p0;
        }
        Self { p, t: 0.0 }
    }
}

/// Flow-front positions per retained grid column over time.
#[derive(Debug, Clone)]
pub struct FrontSeries {
    pub times: Vec<f64>,
    /// One front vector per sample time, ordered as `columns`.
    pub fronts: Vec<Vec<f64>>,
    /// Grid columns each line corresponds to.
    pub columns: Vec<usize>,
    /// Mould length, the upper bound of every front value.
    pub ly: f64,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// One semi-implicit Euler step: solves the linear system
/// `(dh/dp(pₙ)/dt) p − ∇·(κφH/μ ∇p) = (dh/dp(pₙ)/dt) pₙ` with Dirichlet
/// rows at inlet/outlet and no-flux sides.
pub fn step_pressure(
    p_n: &PressureField,
    dt: f64,
    field: &MaterialField,
    p0: f64,
) -> Result<PressureField> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let grid = &field.grid;
    let (vx, vy) = (grid.vx(), grid.vy());
    let (dxs, dys) = (grid.dx(), grid.dy());
    let phih = field.porosity * field.thickness;

    // Boundary-vertex control volumes are halved along the boundary axis.
    let wx = |i: usize| if i == 0 || i == vx - 1 { 0.5 } else { 1.0 };

    // Unknowns: all vertices in rows j = 1..vy-2; inlet (j = 0) and outlet
    // (j = vy-1) rows are Dirichlet.
    let rows = vy - 2;
    let n_unknown = rows * vx;
    let uidx = |i: usize, j: usize| (j - 1) * vx + i;

    let coef = |i: usize, j: usize| field.kappa_over_mu[grid.idx(i, j)] * phih;
    // Face transmissibilities, precomputed once per step. x-faces only occur
    // in interior rows (wy = 1 there); y-faces carry the half-width factor of
    // boundary columns.
    let tx_arr: Vec<f64> = (1..vy - 1)
        .flat_map(|j| (0..vx - 1).map(move |i| (i, j)))
        .map(|(i, j)| harmonic(coef(i, j), coef(i + 1, j)) * dys / dxs)
        .collect();
    let ty_arr: Vec<f64> = (0..vy - 1)
        .flat_map(|j| (0..vx).map(move |i| (i, j)))
        .map(|(i, j)| harmonic(coef(i, j), coef(i, j + 1)) * wx(i) * dxs / dys)
        .collect();
    let tx = |i: usize, j: usize| tx_arr[(j - 1) * (vx - 1) + i];
    let ty = |i: usize, j: usize| ty_arr[j * vx + i];

    let mut diag = DVector::<f64>::zeros(n_unknown);
    let mut rhs = DVector::<f64>::zeros(n_unknown);
    let mut x = DVector::<f64>::zeros(n_unknown);

    for j in 1..vy - 1 {
        for i in 0..vx {
            let u = uidx(i, j);
            let pn = p_n.p[grid.idx(i, j)];
            let cap = dh_dp(pn, field) * wx(i) * dxs * dys / dt;
            let mut d = cap;
            if i > 0 {
                d += tx(i - 1, j);
            }
            if i + 1 < vx {
                d += tx(i, j);
            }
            d += ty(i, j - 1);
            d += ty(i, j);
            diag[u] = d;
            let mut b = cap * pn;
            if j == 1 {
                b += ty(i, 0) * p0; // inlet row fixed at p0
            }
            // outlet row fixed at 0 contributes nothing
            rhs[u] = b;
            x[u] = pn; // warm start from the previous pressure
        }
    }

    let apply = |v: &DVector<f64>, out: &mut DVector<f64>| {
        for j in 1..vy - 1 {
            for i in 0..vx {
                let u = uidx(i, j);
                let mut acc = diag[u] * v[u];
                if i > 0 {
                    acc -= tx(i - 1, j) * v[uidx(i - 1, j)];
                }
                if i + 1 < vx {
                    acc -= tx(i, j) * v[uidx(i + 1, j)];
                }
                if j > 1 {
                    acc -= ty(i, j - 1) * v[uidx(i, j - 1)];
                }
                if j + 1 < vy - 1 {
                    acc -= ty(i, j) * v[uidx(i, j + 1)];
                }
                out[u] = acc;
            }
        }
    };

    // Incomplete Cholesky (zero fill) preconditioner. On the 5-point pattern
    // the west/south entries of a row share no earlier neighbour, so the
    // factorization reduces to a single sweep in natural ordering.
    let mut lw = vec![0.0f64; n_unknown];
    let mut ls = vec![0.0f64; n_unknown];
    let mut dfac = vec![0.0f64; n_unknown];
    for j in 1..vy - 1 {
        for i in 0..vx {
            let u = uidx(i, j);
            let mut w2 = 0.0;
            if i > 0 {
                lw[u] = -tx(i - 1, j) / dfac[u - 1];
                w2 += lw[u] * lw[u];
            }
            if j > 1 {
                ls[u] = -ty(i, j - 1) / dfac[u - vx];
                w2 += ls[u] * ls[u];
            }
            let v = diag[u] - w2;
            // The matrix is an M-matrix so breakdown is not expected; fall
            // back to the Jacobi value defensively.
            dfac[u] = if v > 0.0 { v.sqrt() } else { diag[u].sqrt() };
        }
    }
    let precond = |r: &DVector<f64>, z: &mut DVector<f64>| {
        for j in 1..vy - 1 {
            for i in 0..vx {
                let u = uidx(i, j);
                let mut acc = r[u];
                if i > 0 {
                    acc -= lw[u] * z[u - 1];
                }
                if j > 1 {
                    acc -= ls[u] * z[u - vx];
                }
                z[u] = acc / dfac[u];
            }
        }
        for j in (1..vy - 1).rev() {
            for i in (0..vx).rev() {
                let u = uidx(i, j);
                let mut acc = z[u];
                if i + 1 < vx {
                    acc -= lw[u + 1] * z[u + 1];
                }
                if j + 1 < vy - 1 {
                    acc -= ls[u + vx] * z[u + vx];
                }
                z[u] = acc / dfac[u];
            }
        }
    };

    conjugate_gradient(&apply, &precond, &rhs, &mut x, 1e-10, 20 * n_unknown).map_err(|e| {
        Error::Numerical(format!("pressure step at t = {}: {e}", p_n.t))
    })?;

    // Max-norm residual check of the discrete balance.
    let mut resid = DVector::<f64>::zeros(n_unknown);
    apply(&x, &mut resid);
    let mut worst = 0.0f64;
    for u in 0..n_unknown {
        let r = (resid[u] - rhs[u]).abs();
        worst = worst.max(r);
    }
    if worst > 1e-8 * p0 {
        return Err(Error::Numerical(format!(
            "pressure step residual {worst:e} exceeds {:e} (t = {})",
            1e-8 * p0,
            p_n.t
        )));
    }

    let mut p = vec![0.0; vx * vy];
    for i in 0..vx {
        p[grid.idx(i, 0)] = p0;
    }
    let slack = 1e-9 * p0;
    for j in 1..vy - 1 {
        for i in 0..vx {
            let mut v = x[uidx(i, j)];
            if v < 0.0 || v > p0 {
                if v >= -slack && v <= p0 + slack {
                    v = v.clamp(0.0, p0);
                } else {
                    return Err(Error::Numerical(format!(
                        "pressure {v} out of [0, {p0}] beyond round-off at vertex ({i}, {j}), t = {}",
                        p_n.t
                    )));
                }
            }
            p[grid.idx(i, j)] = v;
        }
    }
    Ok(PressureField { p, t: p_n.t + dt })
}

/// Per-column front positions from the threshold sum rule.
pub fn extract_front(p: &PressureField, p_th: f64, grid: &GridSpec) -> Result<Vec<f64>> {
    if !(p_th > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {p_th}")));
    }
    let (vx, vy) = (grid.vx(), grid.vy());
    let mut front = Vec::with_capacity(vx);
    for i in 0..vx {
        let mut sum = 0.0;
        for j in 0..vy {
            sum += p.p[grid.idx(i, j)].min(p_th).max(0.0);
        }
        front.push(grid.ly * sum / (p_th * vy as f64));
    }
    Ok(front)
}

/// Time-marches from an empty mould and records fronts every
/// `sample_interval` seconds (which must be a multiple of `dt_pde`).
/// Terminates early once every line reaches 99% of `Ly`.
pub fn simulate(
    grid: GridSpec,
    field: &MaterialField,
    p0: f64,
    p_th: f64,
    dt_pde: f64,
    t_end: f64,
    sample_interval: f64,
) -> Result<FrontSeries> {
    if sample_interval < dt_pde {
        return Err(Error::InvalidArgument(
            "sample_interval must be at least dt_pde".into(),
        ));
    }
    if !(t_end > 0.0) {
        return Err(Error::InvalidArgument("simulation horizon must be positive".into()));
    }
    let per_sample = (sample_interval / dt_pde).round();
    if (per_sample * dt_pde - sample_interval).abs() > 1e-9 * sample_interval {
        return Err(Error::InvalidArgument(
            "sample_interval must be an integer multiple of dt_pde".into(),
        ));
    }
    let per_sample = per_sample as usize;

    let mut pressure = PressureField::initial(&grid, p0);
    let mut times = vec![0.0];
    let mut fronts = vec![extract_front(&pressure, p_th, &grid)?];

    let total_steps = (t_end / dt_pde).ceil() as usize;
    for step in 1..=total_steps {
        pressure = step_pressure(&pressure, dt_pde, field, p0)?;
        if step % per_sample == 0 {
            let front = extract_front(&pressure, p_th, &grid)?;
            let done = front.iter().all(|&z| z >= 0.99 * grid.ly);
            times.push(pressure.t);
            fronts.push(front);
            if done {
                break;
            }
        }
    }

    Ok(FrontSeries { times, fronts, columns: (0..grid.vx()).collect(), ly: grid.ly })
}

/// Adds i.i.d. Gaussian noise (std `s`) to every entry, clamped to
/// `[0, Ly]`. Deterministic in `seed`.
pub fn add_noise(series: &FrontSeries, s: f64, seed: u64) -> Result<FrontSeries> {
    if s < 0.0 {
        return Err(Error::InvalidArgument(format!("noise std must be non-negative, got {s}")));
    }
    if s == 0.0 {
        return Ok(series.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, s).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let fronts = series
        .fronts
        .iter()
        .map(|row| {
            row.iter()
                .map(|&z| (z + normal.sample(&mut rng)).clamp(0.0, series.ly))
                .collect()
        })
        .collect();
    Ok(FrontSeries { fronts, ..series.clone() })
}

/// Keeps `n_sensors` equally spaced columns (always including the first and
/// last; interior targets rounded to the nearest column).
pub fn select_lines(series: &FrontSeries, n_sensors: usize) -> Result<FrontSeries> {
    let width = series.columns.len();
    if n_sensors < 2 || n_sensors > width {
        return Err(Error::InvalidArgument(format!(
            "sensor count must be in [2, {width}], got {n_sensors}"
        )));
    }
    let picks: Vec<usize> = (0..n_sensors)
        .map(|k| ((k as f64) * (width - 1) as f64 / (n_sensors - 1) as f64).round() as usize)
        .collect();
    let fronts = series
        .fronts
        .iter()
        .map(|row| picks.iter().map(|&k| row[k]).collect())
        .collect();
    let columns = picks.iter().map(|&k| series.columns[k]).collect();
    Ok(FrontSeries { times: series.times.clone(), fronts, columns, ly: series.ly })
}
