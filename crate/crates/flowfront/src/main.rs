//! Thin command-line driver over the `flowfront` library.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowfront::config::RunConfig;
use flowfront::error::Error;
use flowfront::eval::{evaluate_run, run_sweep, series_to_frames};
use flowfront::faults::apply_scenario;
use flowfront::io::{
    fit_result_to_json, frames_from_csv, frames_to_csv, front_series_to_csv, rmse_series_to_csv,
    sweep_to_csv,
};
use flowfront::mle::{estimate, prefit_lines};
use flowfront::pde::{add_noise, select_lines, simulate};
use flowfront::stencil::build_stencil;

#[derive(Parser)]
#[command(name = "flowfront", version, about = "Flow-front simulation and estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config path.
    #[arg(long)]
    config: PathBuf,
    /// Output path (file for simulate/inject/fit, directory for
    /// evaluate/sweep).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate flow-front data and write a measurement CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides the config's sensor count.
        #[arg(long)]
        sensors: Option<usize>,
    },
    /// Apply the config's fault scenario to a measurement CSV.
    Inject {
        #[command(flatten)]
        common: Common,
        /// Input measurement CSV.
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit model parameters to a measurement CSV by maximum likelihood.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Input measurement CSV.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the simulate-inject-fit-score pipeline for a single cell.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the full sweep grid and write sweep.csv plus per-cell series.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_file(path: &Path, content: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, content)?;
    Ok(())
}

fn cmd_simulate(common: &Common, sensors: Option<usize>) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let setup = cfg.sim_setup()?;
    let mut series = simulate(
        setup.grid,
        &setup.material,
        setup.p0,
        setup.p_th,
        setup.dt_pde,
        setup.t_end,
        cfg.sim.sample_interval,
    )?;
    if cfg.sim.noise_std > 0.0 {
        series = add_noise(&series, cfg.sim.noise_std, cfg.seed)?;
    }
    if let Some(n) = sensors.or(cfg.sensors.n_sensors) {
        series = select_lines(&series, n)?;
    }
    write_file(&common.out, &front_series_to_csv(&series))
}

fn cmd_inject(common: &Common, data: &Path) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let text = std::fs::read_to_string(data)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", data.display())))?;
    let frames = frames_from_csv(&text)?;
    let out = apply_scenario(&frames, &cfg.scenario)?;
    write_file(&common.out, &frames_to_csv(&out))
}

fn cmd_fit(common: &Common, data: &Path) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let text = std::fs::read_to_string(data)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", data.display())))?;
    let frames = frames_from_csv(&text)?;
    let n = frames[0].z.len();
    if let Some(expected) = cfg.sensors.n_sensors {
        if expected != n {
            return Err(Error::InvalidArgument(format!(
                "data has {n} line columns but the config expects {expected} sensors"
            )));
        }
    }
    if frames.iter().all(|f| f.effective_dim() == 0) {
        return Err(Error::InvalidArgument("no informative observations".into()));
    }
    let dx = cfg.grid.lx / (n - 1) as f64;
    let stencil = build_stencil(n, cfg.model.order, dx)?;
    let opts = cfg.fit_options();
    let theta0 = prefit_lines(&frames, n, &opts.filter, opts.y_min, 300)?;
    let fit = estimate(&frames, &stencil, &theta0, &opts)?;
    write_file(&common.out, &fit_result_to_json(&fit))
}

fn cmd_evaluate(common: &Common) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let setup = cfg.sim_setup()?;
    let clean = simulate(
        setup.grid,
        &setup.material,
        setup.p0,
        setup.p_th,
        setup.dt_pde,
        setup.t_end,
        cfg.sim.sample_interval,
    )?;
    let noisy = if cfg.sim.noise_std > 0.0 {
        add_noise(&clean, cfg.sim.noise_std, cfg.seed)?
    } else {
        clean.clone()
    };
    let n = cfg.sensors.n_sensors.unwrap_or(clean.columns.len());
    let sensors = select_lines(&noisy, n)?;
    let frames = apply_scenario(&series_to_frames(&sensors), &cfg.scenario)?;

    let dx = cfg.grid.lx / (n - 1) as f64;
    let stencil = build_stencil(n, cfg.model.order, dx)?;
    let opts = cfg.fit_options();
    let theta0 = prefit_lines(&frames, n, &opts.filter, opts.y_min, 300)?;
    let fit = estimate(&frames, &stencil, &theta0, &opts)?;
    let record = evaluate_run(
        &clean,
        &frames,
        &sensors.columns,
        &fit.params,
        &stencil,
        &cfg.filter_options(),
        cfg.model.y_min,
    )?;

    std::fs::create_dir_all(&common.out)?;
    write_file(&common.out.join("params.json"), &fit_result_to_json(&fit))?;
    write_file(&common.out.join("rmse_eval.csv"), &rmse_series_to_csv(&record.series))?;
    Ok(())
}

fn cmd_sweep(common: &Common) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let setup = cfg.sim_setup()?;
    let records = run_sweep(&setup, &cfg.sweep_config(), &cfg.fit_options())?;

    std::fs::create_dir_all(&common.out)?;
    write_file(&common.out.join("sweep.csv"), &sweep_to_csv(&records))?;
    let mut any_ok = false;
    for record in &records {
        if let Ok(eval) = &record.outcome {
            any_ok = true;
            write_file(
                &common.out.join(format!("rmse_{}.csv", record.config_id)),
                &rmse_series_to_csv(&eval.series),
            )?;
        } else if let Err(msg) = &record.outcome {
            eprintln!("cell {} failed: {msg}", record.config_id);
        }
    }
    if !any_ok {
        return Err(Error::Numerical("every sweep cell failed".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common, sensors } => cmd_simulate(common, *sensors),
        Command::Inject { common, data } => cmd_inject(common, data),
        Command::Fit { common, data } => cmd_fit(common, data),
        Command::Evaluate { common } => cmd_evaluate(common),
        Command::Sweep { common } => cmd_sweep(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
