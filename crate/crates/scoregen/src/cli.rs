//! `scoregen <subcommand>`: exit 0 on success, 1 when a check fails or a stage
//! errors, 2 on usage and configuration errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scoregen_core::TanhNet;
use serde::Serialize;

use crate::config::{Config, PRESETS};
use crate::error::{Error, Result};
use crate::experiments::{self, PipelineResult, Setup};
use crate::suites::{self, Scale, Suite};
use crate::{checkpoint, io, parallel};

#[derive(Debug, Parser)]
#[command(name = "scoregen", version, about = "Score-based generative modeling on Gaussian-mixture targets")]
pub struct Cli {
    /// Config file (TOML, flat sections).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in config used when no file is given.
    #[arg(long, global = true, default_value = "benchmark")]
    pub preset: String,
    /// Override a config key: `--set section.key=value` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed (overrides `run.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the training set, build the schedule and train every interval network.
    Train,
    /// Generate samples from a trained checkpoint.
    Sample {
        /// Checkpoint (default: <out>/model.ckpt).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// W₁ against fresh target draws and Fisher loss against the oracle, with baselines.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the structural check suites and emit a JSON report array.
    Verify {
        /// all | denoising | reversal | stability
        #[arg(long, default_value = "all")]
        suite: Suite,
        /// Smaller Monte Carlo sizes.
        #[arg(long)]
        quick: bool,
    },
    /// Repeat the pipeline over the configured sample sizes.
    Sweep,
    /// Closed-form oracle checks: finite differences and score regularity.
    OracleCheck {
        #[arg(long, default_value_t = 500)]
        cases: usize,
    },
}

pub fn main<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = cli.threads;
    match parallel::with_threads(threads, || execute(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::ConfigNotFound(_) | Error::Config(_) => {
                    eprintln!("usage: scoregen [--config FILE | --preset {}] [--seed N] [--threads N] [--out DIR] <train|sample|evaluate|verify|sweep|oracle-check>", PRESETS.join("|"));
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}

pub fn resolve_config(cli: &Cli) -> Result<Config> {
    let base = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::preset(&cli.preset)?,
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: Serialize + ?Sized>(value: &T) -> Result<()> {
    io::emit(None, &serde_json::to_string_pretty(value)?)
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    checkpoint: &'a Path,
    sha256: String,
    intervals: usize,
    total_params: usize,
}

fn model_path(out: &Path, model: &Option<PathBuf>) -> PathBuf {
    model.clone().unwrap_or_else(|| out.join(io::CHECKPOINT_FILE))
}

/// Runs one subcommand; `Ok(false)` means a check failed.
pub fn execute(cli: &Cli) -> Result<bool> {
    let cfg = resolve_config(cli)?;
    let out = cli.out.as_path();
    io::ensure_dir(out)?;
    io::write_snapshot(out, &cfg.snapshot())?;
    match &cli.command {
        Command::Train => {
            let setup = Setup::new(&cfg)?;
            let (model, logs) = setup.train()?;
            let path = out.join(io::CHECKPOINT_FILE);
            let bytes = checkpoint::save(&model, &path)?;
            let params: Vec<usize> = model.nets().iter().map(TanhNet::param_count).collect();
            io::write_training_logs(out, &logs, &params)?;
            print_json(&TrainOutput {
                checkpoint: &path,
                sha256: io::sha256_hex(&bytes),
                intervals: logs.len(),
                total_params: model.total_params(),
            })?;
            Ok(true)
        }
        Command::Sample { model } => {
            let setup = Setup::new(&cfg)?;
            let model = checkpoint::load(&model_path(out, model), &setup.schedule)?;
            let (samples, prov) = setup.generate(&model)?;
            if cfg.sample.format == "csv" {
                io::write_samples_csv(&out.join(io::SAMPLES_CSV), &samples)?;
            }
            let sidecar = io::write_samples_bin(out, &samples, &prov, &cfg.hash())?;
            print_json(&sidecar)?;
            Ok(true)
        }
        Command::Evaluate { model } => {
            let setup = Setup::new(&cfg)?;
            let path = model_path(out, model);
            let bytes = std::fs::read(&path).map_err(crate::error::io_err(&path))?;
            let model = checkpoint::into_model(checkpoint::decode(&bytes)?, &setup.schedule)?;
            let (samples, _) = setup.generate(&model)?;
            let metrics = experiments::evaluate(&setup, &model, &samples)?;
            let result = PipelineResult {
                config_hash: cfg.hash(),
                checkpoint_sha256: io::sha256_hex(&bytes),
                samples_sha256: io::sha256_hex(&samples.iter().flatten().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()),
                seed: cfg.run.seed,
                n: cfg.schedule.n,
                d: setup.target.dim(),
                t_low: setup.schedule.t_low(),
                t_high: setup.schedule.t_high(),
                intervals: setup.schedule.total_intervals(),
                total_params: model.total_params(),
                metrics,
            };
            io::write_json(&out.join(io::METRICS_FILE), &result)?;
            print_json(&result)?;
            Ok(true)
        }
        Command::Verify { suite, quick } => {
            let scale = if *quick { Scale::quick() } else { Scale::full() };
            let reports = suites::run(*suite, &scale, cfg.run.seed)?;
            io::write_json(&out.join("verify.json"), &reports)?;
            print_json(&reports)?;
            Ok(reports.iter().all(|r| r.pass))
        }
        Command::Sweep => {
            let summary = experiments::rate_sweep(&cfg, Some(out))?;
            print_json(&summary)?;
            Ok(summary.monotone && summary.slope_negative)
        }
        Command::OracleCheck { cases } => {
            let report = suites::oracle_check(cfg.run.seed, *cases)?;
            io::write_json(&out.join("oracle_check.json"), &report)?;
            print_json(&report)?;
            Ok(report.pass)
        }
    }
}
