//! `jbridge`: simulate, tabulate, verify and calibrate jump OU bridges.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 configuration
//! error, 3 runtime error.

mod config;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jbridge::calibration::{ingest_csv, parse_interval, calibrate};
use jbridge::coefficients::Feedback;
use jbridge::ensemble::{run_ensemble, EnsembleOptions};
use jbridge::io::{
    write_acf_csv, write_coefficients_csv, write_json, write_moments_csv, write_paths_csv,
    write_terminal_csv,
};
use jbridge::moments::{ou_bridge_moments, se_bridge_moments};
use jbridge::sde::{Dynamics, Scheme, Simulator};
use serde_json::json;

use config::{DynamicsKind, Overrides, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl From<jbridge::Error> for CliError {
    fn from(e: jbridge::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "jbridge", version, about = "Jump Ornstein–Uhlenbeck bridges: simulation, moments, verification, calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo ensemble: paths CSV, terminal CSV and report JSON.
    Simulate(Common),
    /// Moment curves and feedback coefficients of the configured bridge.
    Moments(Common),
    /// Run the invariant suite and write a pass/fail report.
    Verify(Common),
    /// Fit reversion rate, driver and self-excitation to a discharge series.
    Calibrate(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Raw,
    Compensated,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Override the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Use dt = 1/200000 and 200000 paths.
    #[arg(long)]
    paper_scale: bool,
    /// Jump bookkeeping of the Euler step.
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Moments(c) => ("moments", c),
        Command::Verify(c) => ("verify", c),
        Command::Calibrate(c) => ("calibrate", c),
    };
    match run(command, common) {
        Ok(code) => code,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(command: &str, common: &Common) -> Result<ExitCode, CliError> {
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        paper_scale: common.paper_scale,
        scheme: common.scheme.map(|s| match s {
            SchemeArg::Raw => Scheme::Raw,
            SchemeArg::Compensated => Scheme::Compensated,
        }),
    };
    let cfg = RunConfig::load(&common.config, &overrides)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be ≥ 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| match command {
        "simulate" => cmd_simulate(&cfg),
        "moments" => cmd_moments(&cfg),
        "verify" => cmd_verify(&cfg),
        _ => cmd_calibrate(&cfg),
    })
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let model = cfg.model()?;
    let sim = cfg.sim_config()?;
    let task = cfg.task.simulate.clone().unwrap_or_default();
    let dynamics = match task.dynamics {
        DynamicsKind::Ou => Dynamics::Ou,
        DynamicsKind::Se => Dynamics::Se,
        DynamicsKind::Bridge => Dynamics::Bridge,
        DynamicsKind::Controlled => Dynamics::Controlled {
            penalty: task
                .penalty
                .ok_or_else(|| CliError::Config("controlled dynamics need task.simulate.penalty".into()))?,
        },
    };
    let options = EnsembleOptions {
        curve_points: cfg.sim.curve_points,
        keep_terminal: true,
        ..EnsembleOptions::default()
    };
    let report = run_ensemble(&model, &sim, cfg.sim.n_paths, dynamics, &options)?;
    let simulator = Simulator::new(&model, &sim, dynamics)?;
    let shown = task.paths_to_write.min(cfg.sim.n_paths);
    let paths: Vec<_> = (0..shown as u64).map(|id| simulator.path(id)).collect();

    write_paths_csv(&out_path(cfg, "paths.csv"), &paths, cfg.sim.decimation, cfg)?;
    write_terminal_csv(&out_path(cfg, "terminal.csv"), &report.terminal_values, cfg)?;
    write_json(&out_path(cfg, "report.json"), &json!({"config": cfg, "report": report}))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_moments(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let model = cfg.model()?;
    let sim = cfg.sim_config()?;
    let curves = if model.is_self_exciting() {
        se_bridge_moments(&model, sim.n_steps, sim.se_drift)?
    } else {
        ou_bridge_moments(&model, sim.n_steps)?
    };
    let step = cfg.sim.decimation;
    let keep = |k: usize, n: usize| k.is_multiple_of(step) || k + 1 == n;
    let n = curves.len();
    let decimated = jbridge::moments::MomentCurves {
        grid: (0..n).filter(|&k| keep(k, n)).map(|k| curves.grid[k]).collect(),
        mean: (0..n).filter(|&k| keep(k, n)).map(|k| curves.mean[k]).collect(),
        second: (0..n).filter(|&k| keep(k, n)).map(|k| curves.second[k]).collect(),
        variance: (0..n).filter(|&k| keep(k, n)).map(|k| curves.variance[k]).collect(),
    };
    let coeffs = model.limit_coefficients();
    let mut rows = Vec::new();
    for k in (0..sim.n_steps).filter(|&k| keep(k, sim.n_steps)) {
        let t = sim.time(k);
        let (a, b) = coeffs.ab(t)?;
        rows.push((t, a, b));
    }
    write_moments_csv(&out_path(cfg, "moments.csv"), &decimated, cfg)?;
    write_coefficients_csv(&out_path(cfg, "coefficients.csv"), &rows, cfg)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let model = cfg.model()?;
    let sim = cfg.sim_config()?;
    let task = cfg.task.verify.clone().unwrap_or_default();
    let checks = verify::run_all(&model, &sim, cfg.sim.n_paths, &task)?;
    let all_passed = checks.iter().filter(|c| !c.expected_fail).all(|c| c.passed);
    write_json(
        &out_path(cfg, "verify.json"),
        &json!({"config": cfg, "all_passed": all_passed, "checks": checks}),
    )?;
    for c in &checks {
        let verdict = match (c.passed, c.expected_fail) {
            (true, _) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
        };
        println!("{verdict:<16} {}", c.name);
    }
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_calibrate(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let task = cfg
        .task
        .calibrate
        .clone()
        .ok_or_else(|| CliError::Config("calibrate needs a task.calibrate block".into()))?;
    let interval = parse_interval(&task.interval).map_err(|e| CliError::Config(e.to_string()))?;
    let max_gap = parse_interval(&task.max_gap).map_err(|e| CliError::Config(e.to_string()))?;
    let ingested = ingest_input(&task.input, interval, max_gap)?;
    let series = ingested.longest();
    let (reversion, result) = calibrate(series, &task.fit)?;
    write_acf_csv(&out_path(cfg, "acf.csv"), &reversion.rows(), cfg)?;
    write_json(
        &out_path(cfg, "calibration.json"),
        &json!({
            "config": cfg,
            "ingest": {
                "raw_rows": ingested.raw_rows,
                "segments": ingested.segments.len(),
                "used_segment_length": series.len(),
                "long_gaps": ingested.long_gaps,
            },
            "reversion": {
                "decay_rate": reversion.decay_rate,
                "fitted_lags": reversion.fitted_lags,
                "rms_residual": reversion.rms_residual,
            },
            "result": result,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

/// Malformed input files are configuration errors.
fn ingest_input(path: &Path, interval: i64, max_gap: i64) -> Result<jbridge::calibration::Ingested, CliError> {
    ingest_csv(path, interval, max_gap).map_err(|e| match e {
        jbridge::Error::Data(_) | jbridge::Error::Csv(_) | jbridge::Error::Io(_) => {
            CliError::Config(format!("{}: {e}", path.display()))
        }
        other => CliError::Runtime(other.to_string()),
    })
}
