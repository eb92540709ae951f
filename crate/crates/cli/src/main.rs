use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use tspg_core::approx::{approx_error_table, rows_to_csv, DEFAULT_ITEMS, DEFAULT_KS, DEFAULT_TAUS, DEFAULT_TRIALS};
use tspg_core::sweep::{parse_seeds, run_sweep, Axis};
use tspg_core::verify::{run_suite, Fault, VerifyOptions};
use tspg_core::{run_experiment, Error, TrainConfig};

const OUT_DIR_ENV: &str = "TSPG_OUT_DIR";

#[derive(Parser)]
#[command(name = "tspg", version, about = "Two-stage ranking policy-gradient simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration. Exit 0 when it completes, 2 on gradient
    /// overflow, 1 on invalid input.
    Run {
        /// Flat key=value config file.
        #[arg(long)]
        config: PathBuf,
        /// Extra `key=value` overrides applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train a grid of configurations over several seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Swept key with values, e.g. `esr.k=5,10,20`. Repeatable.
        #[arg(long = "grid", value_name = "KEY=V1,V2")]
        axes: Vec<String>,
        /// `0-9` or `1,4,7`.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output root; defaults to $TSPG_OUT_DIR or `sweeps`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite and print a JSON report. Exit 0 iff every
    /// property holds.
    Verify {
        /// Also reproduce the approximation-error table.
        #[arg(long)]
        full_scale: bool,
        /// Inject a known defect, e.g. `corrupt_gradient`.
        #[arg(long)]
        inject_fault: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Relative error of the arg-top-(k-1) approximation against Monte-Carlo
    /// ground truth, as CSV.
    ApproxError {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TAUS.to_vec())]
        taus: Vec<f64>,
        #[arg(long = "ks", value_delimiter = ',', default_values_t = DEFAULT_KS.to_vec())]
        ks: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_ITEMS)]
        items: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, overrides: &[String]) -> Result<TrainConfig, Error> {
    let mut cfg = TrainConfig::load(path)?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::ConfigConstraint(format!("override `{o}` is not key=value")))?;
        cfg.set(k.trim(), v).map_err(|msg| Error::ConfigConstraint(format!("override {o}: {msg}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Relative output paths live under `$TSPG_OUT_DIR` when it is set.
fn resolve_out(dir: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

fn cmd_run(config: &Path, overrides: &[String]) -> Result<ExitCode> {
    let mut cfg = match load_config(config, overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(1));
        }
    };
    cfg.output_dir = resolve_out(&cfg.output_dir);
    let log = match run_experiment(&cfg) {
        Ok(l) => l,
        Err(e @ (Error::Config { .. } | Error::ConfigConstraint(_) | Error::Io(_) | Error::Csv(_) | Error::Parse { .. }
        | Error::MissingCell { .. } | Error::DuplicateCell { .. } | Error::InvalidArgument(_))) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(1));
        }
        Err(e) => return Err(e.into()),
    };
    log.write(&cfg.output_dir).with_context(|| format!("writing outputs to {}", cfg.output_dir.display()))?;
    println!("{}", serde_json::to_string(&log.summary_json())?);
    Ok(if log.overflowed() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_sweep(config: &Path, axes: &[String], seeds: &str, workers: usize, out: Option<PathBuf>) -> Result<ExitCode> {
    let prepared = (|| -> Result<_, Error> {
        let cfg = load_config(config, &[])?;
        let axes = axes.iter().map(|a| a.parse::<Axis>()).collect::<Result<Vec<_>, _>>()?;
        Ok((cfg, axes, parse_seeds(seeds)?))
    })();
    let (cfg, axes, seeds) = match prepared {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(1));
        }
    };
    let root = out.unwrap_or_else(|| resolve_out(Path::new("sweeps")));
    match run_sweep(&cfg, &axes, &seeds, &root, workers) {
        Ok(res) => {
            print!("{}", res.aggregate_csv());
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ (Error::ConfigConstraint(_) | Error::InvalidArgument(_))) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(1))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_verify(full_scale: bool, fault: Option<String>, seed: u64, report: Option<PathBuf>) -> Result<ExitCode> {
    let fault = match fault.map(|f| f.parse::<Fault>()).transpose() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(1));
        }
    };
    let rep = run_suite(VerifyOptions { full_scale, fault, seed })?;
    let text = serde_json::to_string_pretty(&rep.to_json())?;
    println!("{text}");
    if let Some(p) = report {
        std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(if rep.all_passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config, overrides } => cmd_run(&config, &overrides),
        Command::Sweep { config, axes, seeds, workers, out } => cmd_sweep(&config, &axes, &seeds, workers, out),
        Command::Verify { full_scale, inject_fault, seed, report } => cmd_verify(full_scale, inject_fault, seed, report),
        Command::ApproxError { taus, ks, trials, items, seed, out } => {
            if ks.iter().any(|&k| k == 0 || k >= items) || taus.iter().any(|&t| !(t > 0.0)) || trials == 0 {
                eprintln!("error: need 0 < k < items, tau > 0 and trials > 0");
                return Ok(ExitCode::from(1));
            }
            let csv = rows_to_csv(&approx_error_table(items, &taus, &ks, trials, seed));
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
