use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use proxboost::error::{Error, Result};
use proxboost::harness::calibrate::{calibrate, robust_gradient_tail};
use proxboost::harness::runner::{run_workload, Workload};
use proxboost::harness::{summarize, verify, write_outputs, OracleKind, RunConfig, SummaryReport};

/// Upper 99% bound allowed on an oracle's failure rate.
const CALIBRATION_LIMIT: f64 = 0.40;

#[derive(Parser)]
#[command(
    name = "proxboost",
    version,
    about = "High-confidence stochastic convex optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the deterministic property suites.
    Verify {
        #[arg(long, default_value_t = 20_240_601)]
        seed: u64,
    },
    /// Monte-Carlo check of an oracle's 2/3 success contract
    /// (`sgd`, `acc-sgd`, `prox-sgd`, or `robust-gradient`).
    Calibrate {
        #[arg(long)]
        oracle: String,
        #[arg(long, default_value_t = 1000)]
        reps: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the macro-replications of one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `base_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "PROXBOOST_JOBS")]
        jobs: Option<usize>,
    },
    /// Run a configuration once per value of one key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=v1,v2,...`
        #[arg(long)]
        vary: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Each value's outputs go to `<out>/<key>=<value>/`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "PROXBOOST_JOBS")]
        jobs: Option<usize>,
    },
}

fn print_reports(reports: &[SummaryReport]) {
    println!(
        "{:<16} {:>6} {:>8} {:>9} {:>9} {:>9} {:>14}",
        "method", "R", "fails", "rate", "upper95", "upper99", "mean_samples"
    );
    for r in reports {
        let name = r.method.map(|m| m.to_string()).unwrap_or_else(|| "mixed".into());
        println!(
            "{:<16} {:>6} {:>8} {:>9.4} {:>9.4} {:>9.4} {:>14.1}",
            name, r.replications, r.failures, r.failure_rate, r.upper95, r.upper99, r.mean_samples
        );
    }
}

fn execute(config: &RunConfig, jobs: Option<usize>, out: Option<&PathBuf>) -> Result<Vec<SummaryReport>> {
    let workload = Workload::build(config)?;
    let records = run_workload(&workload, jobs.or(config.jobs))?;
    let reports = summarize(&records)?;
    if let Some(dir) = out {
        write_outputs(dir, config, &records, &reports)?;
    }
    Ok(reports)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify { seed } => {
            let reports = verify::run_all(seed)?;
            for r in &reports {
                println!(
                    "{} {:<28} cases={:<7} violations={:<4} worst={:.3e} {}ms",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.cases,
                    r.violations,
                    r.worst,
                    r.elapsed_ms
                );
            }
            Ok(reports.iter().all(|r| r.passed()))
        }
        Command::Calibrate { oracle, reps, seed } => {
            if oracle == "robust-gradient" {
                let r = robust_gradient_tail(reps, 37, 0.5, seed)?;
                let limit = r.nominal + 0.03;
                let ok = r.upper95 <= limit;
                println!(
                    "{} m={} eps={} fails={}/{} upper95={:.4} limit={:.4}",
                    if ok { "PASS" } else { "FAIL" },
                    r.m,
                    r.eps,
                    r.failures,
                    r.replications,
                    r.upper95,
                    limit
                );
                return Ok(ok);
            }
            let kind: OracleKind = oracle.parse()?;
            let rows = calibrate(kind, reps, seed)?;
            let mut ok = true;
            for r in &rows {
                let pass = r.upper99 <= CALIBRATION_LIMIT;
                ok &= pass;
                println!(
                    "{} {} delta={} lambda={} fails={}/{} upper99={:.4} mean_samples={:.1}",
                    if pass { "PASS" } else { "FAIL" },
                    r.oracle,
                    r.delta,
                    r.lambda,
                    r.failures,
                    r.replications,
                    r.upper99,
                    r.mean_samples
                );
            }
            Ok(ok)
        }
        Command::Run {
            config,
            seed,
            out,
            jobs,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let out = out
                .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
                .ok_or_else(|| Error::Config("no output directory: pass --out or set out_dir".into()))?;
            print_reports(&execute(&cfg, jobs, Some(&out))?);
            Ok(true)
        }
        Command::Sweep {
            config,
            vary,
            seed,
            out,
            jobs,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let (key, values) = vary
                .split_once('=')
                .ok_or_else(|| Error::Config("--vary expects key=v1,v2,...".into()))?;
            for value in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                let point = cfg.with_override(key, value)?;
                let dir = out.as_ref().map(|o| o.join(format!("{key}={value}")));
                println!("== {key} = {value}");
                print_reports(&execute(&point, jobs, dir.as_ref())?);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
