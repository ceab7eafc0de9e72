//! Command-line front end.
//!
//! Subcommands: `validate`, `solve`, `value`, `simulate`, `sweep`.
//! Exit codes: 0 ok, 1 input error, 2 assumption violation, 3 solver did
//! not converge, 4 missing or invalid dependency artifact.
//!
//! Every run writes `manifest.json` into the output directory with the
//! fully resolved configuration and seed, so outputs can be reproduced
//! bit-exactly. All numeric results are independent of the worker count
//! (`--threads` / `LIQUIDEX_THREADS`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use liquidex::boundary::{
    boundary_transforms, read_boundary_csv, solve_boundary, write_boundary_csv, BoundaryTransforms,
    ConvergenceLog, MonotoneBoundary,
};
use liquidex::config::RunConfig;
use liquidex::error::Error;
use liquidex::execution::{estimate_policy_value, write_simulation_csv, Policy};
use liquidex::params::ModelParams;
use liquidex::value::{value_surface, write_value_csv};

#[derive(Parser)]
#[command(name = "liquidex", version, about = "Optimal liquidation under drift uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to LIQUIDEX_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepParameter {
    Mu1,
    R,
    Sigma,
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration and the model assumptions.
    Validate(Common),
    /// Solve the free boundary; writes boundary.csv and convergence.json.
    Solve(Common),
    /// Evaluate the value surface on the configured grids; writes value.csv.
    Value {
        #[command(flatten)]
        common: Common,
        /// A boundary.csv produced by `solve`.
        #[arg(long)]
        boundary: PathBuf,
    },
    /// Simulate the configured execution policy; writes simulation.csv and
    /// summary.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// A boundary.csv produced by `solve` (required for the optimal
        /// policy).
        #[arg(long)]
        boundary: Option<PathBuf>,
    },
    /// Re-solve the boundary across parameter values; writes one
    /// boundary_<param>_<value>.csv per value plus sweep_summary.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Which model parameter to vary.
        parameter: SweepParameter,
        /// Values to sweep over.
        #[arg(required = false)]
        values: Vec<f64>,
    },
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::AssumptionViolation(_) => 2,
        Error::Dependency(_) => 4,
        _ => 1,
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_for(&e))
}

/// Load the config, apply CLI overrides, configure the thread pool, and
/// make sure the output directory exists.
fn prepare(common: &Common) -> Result<(RunConfig, PathBuf), Error> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", common.config.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.solver.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.display().to_string();
    }
    cfg.validate_structure()?;
    let threads = common.threads.or_else(|| {
        std::env::var("LIQUIDEX_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        // Ignore the error if a pool already exists (tests, repeated calls);
        // results do not depend on the pool size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let out_dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out_dir)?;
    Ok((cfg, out_dir))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    resolved_config: &'a RunConfig,
    seed: u64,
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig) -> Result<(), Error> {
    let m = Manifest {
        command,
        resolved_config: cfg,
        seed: cfg.seed,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&m)?)?;
    Ok(())
}

fn cmd_validate(common: &Common) -> Result<ExitCode, Error> {
    let (cfg, out_dir) = prepare(common)?;
    let report = cfg.params.validate()?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    write_manifest(&out_dir, "validate", &cfg)?;
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("assumption checks failed: {}", report.failures().join("; "));
        Ok(ExitCode::from(2))
    }
}

fn solve_with_artifacts(
    cfg: &RunConfig,
    out_dir: &Path,
    stem: &str,
) -> Result<(MonotoneBoundary, BoundaryTransforms, ConvergenceLog), Error> {
    let (b_inv, log) = solve_boundary(&cfg.params, &cfg.solver)?;
    let t = boundary_transforms(&cfg.params, &b_inv)?;
    let file = fs::File::create(out_dir.join(format!("{stem}.csv")))?;
    write_boundary_csv(&b_inv, &t, file)?;
    Ok((b_inv, t, log))
}

fn cmd_solve(common: &Common) -> Result<ExitCode, Error> {
    let (cfg, out_dir) = prepare(common)?;
    cfg.params.require_valid()?;
    let (_, _, log) = solve_with_artifacts(&cfg, &out_dir, "boundary")?;
    fs::write(
        out_dir.join("convergence.json"),
        serde_json::to_vec_pretty(&log)?,
    )?;
    write_manifest(&out_dir, "solve", &cfg)?;
    for w in &log.warnings {
        eprintln!("warning: {w}");
    }
    if log.converged {
        println!("converged in {} iterations", log.iterations.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "not converged after {} iterations (partial result written)",
            log.iterations.len()
        );
        Ok(ExitCode::from(3))
    }
}

fn load_boundary(path: &Path, clamp_hi: f64) -> Result<MonotoneBoundary, Error> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Dependency(format!("{}: {e}", path.display())))?;
    read_boundary_csv(file, clamp_hi)
}

fn cmd_value(common: &Common, boundary: &Path) -> Result<ExitCode, Error> {
    let (cfg, out_dir) = prepare(common)?;
    cfg.params.require_valid()?;
    let b_inv = load_boundary(boundary, cfg.solver.clamp_hi)?;
    let t = boundary_transforms(&cfg.params, &b_inv)?;
    let points = value_surface(
        &cfg.params,
        &cfg.value_grids.x.nodes(),
        &cfg.value_grids.pi.nodes(),
        &cfg.value_grids.y.nodes(),
        &t.c,
        &cfg.quadrature,
        cfg.drift_weighting,
    )?;
    let file = fs::File::create(out_dir.join("value.csv"))?;
    write_value_csv(&points, file)?;
    write_manifest(&out_dir, "value", &cfg)?;
    println!("wrote {} value rows", points.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(common: &Common, boundary: Option<&Path>) -> Result<ExitCode, Error> {
    let (cfg, out_dir) = prepare(common)?;
    cfg.params.require_valid()?;
    let b = match (cfg.simulation.policy, boundary) {
        (Policy::Optimal, Some(p)) => {
            let b_inv = load_boundary(p, cfg.solver.clamp_hi)?;
            // The execution threshold is b(phi), the inverse of the stored
            // b_inv(x).
            Some(boundary_transforms(&cfg.params, &b_inv)?.b)
        }
        (Policy::Optimal, None) => {
            return Err(Error::Dependency(
                "the optimal policy needs --boundary".into(),
            ))
        }
        (Policy::Precommitted, _) => None,
    };
    let (summary, records) = estimate_policy_value(
        &cfg.params,
        cfg.simulation.x0,
        cfg.simulation.y0,
        cfg.simulation.policy,
        b.as_ref(),
        cfg.simulation.n_paths,
        cfg.simulation.horizon,
        cfg.simulation.dt,
        cfg.seed,
        0,
    )?;
    let file = fs::File::create(out_dir.join("simulation.csv"))?;
    write_simulation_csv(&records, file)?;
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_vec_pretty(&summary)?,
    )?;
    write_manifest(&out_dir, "simulate", &cfg)?;
    println!(
        "mean payoff {} (std error {}) over {} paths",
        summary.mean, summary.std_error, summary.n_paths
    );
    Ok(ExitCode::SUCCESS)
}

fn apply_sweep(p: &ModelParams, parameter: SweepParameter, value: f64) -> ModelParams {
    let mut q = *p;
    match parameter {
        SweepParameter::Mu1 => q.mu1 = value,
        SweepParameter::R => q.r = value,
        SweepParameter::Sigma => q.sigma = value,
    }
    q
}

fn cmd_sweep(
    common: &Common,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<ExitCode, Error> {
    if values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    let (cfg, out_dir) = prepare(common)?;
    let param_name = match parameter {
        SweepParameter::Mu1 => "mu1",
        SweepParameter::R => "r",
        SweepParameter::Sigma => "sigma",
    };
    let probes = [0.2, 0.4, 0.6, 0.8];
    let mut wtr = csv::Writer::from_writer(fs::File::create(out_dir.join("sweep_summary.csv"))?);
    wtr.write_record(["parameter", "value", "converged", "pi", "a"])?;
    let mut succeeded = 0usize;
    for &value in values {
        let mut run = cfg.clone();
        run.params = apply_sweep(&cfg.params, parameter, value);
        match run.params.require_valid() {
            Ok(_) => {}
            Err(e) => {
                eprintln!("warning: {param_name} = {value} skipped: {e}");
                continue;
            }
        }
        let stem = format!("boundary_{param_name}_{value}");
        let (_, t, log) = solve_with_artifacts(&run, &out_dir, &stem)?;
        for &pi in &probes {
            wtr.write_record([
                param_name.to_string(),
                value.to_string(),
                log.converged.to_string(),
                pi.to_string(),
                t.a.eval(pi).to_string(),
            ])?;
        }
        succeeded += 1;
    }
    wtr.flush()?;
    write_manifest(&out_dir, "sweep", &cfg)?;
    if succeeded == 0 {
        Err(Error::AssumptionViolation(
            "every sweep value failed validation".into(),
        ))
    } else {
        println!("swept {param_name} over {succeeded} admissible value(s)");
        Ok(ExitCode::SUCCESS)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match &cli.command {
        Command::Validate(c) => cmd_validate(c),
        Command::Solve(c) => cmd_solve(c),
        Command::Value { common, boundary } => cmd_value(common, boundary),
        Command::Simulate { common, boundary } => cmd_simulate(common, boundary.as_deref()),
        Command::Sweep {
            common,
            parameter,
            values,
        } => cmd_sweep(common, *parameter, values),
    };
    match run {
        Ok(code) => code,
        Err(e) => fail(e),
    }
}
