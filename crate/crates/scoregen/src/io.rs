//! Output files: JSON records, sample blocks with sidecars, training logs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use scoregen_core::sampler::Provenance;
use scoregen_core::trainer::IntervalLog;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SAMPLES_BIN: &str = "samples.bin";
pub const SAMPLES_JSON: &str = "samples.json";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRAINING_DIR: &str = "training";
pub const TRAINING_SUMMARY: &str = "training_summary.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_snapshot(dir: &Path, snapshot: &str) -> Result<()> {
    let path = dir.join(SNAPSHOT_FILE);
    fs::write(&path, snapshot).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesSidecar {
    pub n_paths: usize,
    pub d: usize,
    pub config_hash: String,
    pub seed: u64,
    /// Hash of the sampler settings alone.
    pub run_hash: String,
    pub stream_id: u64,
    pub n_steps: usize,
    pub t_low: f64,
    pub t_high: f64,
    pub profile: String,
    pub integrator: String,
    /// SHA-256 of the binary block.
    pub sha256: String,
}

fn flatten(samples: &[Vec<f64>]) -> Vec<u8> {
    samples.iter().flatten().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes `samples.bin` (row-major little-endian f64) and its JSON sidecar.
pub fn write_samples_bin(dir: &Path, samples: &[Vec<f64>], prov: &Provenance, config_hash: &str) -> Result<SamplesSidecar> {
    let bytes = flatten(samples);
    let bin = dir.join(SAMPLES_BIN);
    fs::write(&bin, &bytes).map_err(io_err(&bin))?;
    let sidecar = SamplesSidecar {
        n_paths: samples.len(),
        d: samples.first().map_or(0, Vec::len),
        config_hash: config_hash.to_string(),
        seed: prov.seed,
        run_hash: format!("{:016x}", prov.config_hash),
        stream_id: prov.stream_id,
        n_steps: prov.n_steps,
        t_low: prov.t_low,
        t_high: prov.t_high,
        profile: prov.profile.clone(),
        integrator: format!("{:?}", prov.integrator),
        sha256: sha256_hex(&bytes),
    };
    write_json(&dir.join(SAMPLES_JSON), &sidecar)?;
    Ok(sidecar)
}

/// Reads a `samples.bin` block using the sidecar next to it.
pub fn read_samples_bin(dir: &Path) -> Result<(Vec<Vec<f64>>, SamplesSidecar)> {
    let side_path = dir.join(SAMPLES_JSON);
    let sidecar: SamplesSidecar = serde_json::from_slice(&fs::read(&side_path).map_err(io_err(&side_path))?)?;
    let bin = dir.join(SAMPLES_BIN);
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    if bytes.len() != sidecar.n_paths * sidecar.d * 8 {
        return Err(Error::Config(format!("{}: size does not match its sidecar", bin.display())));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let samples = if sidecar.d == 0 { Vec::new() } else { values.chunks(sidecar.d).map(<[f64]>::to_vec).collect() };
    Ok((samples, sidecar))
}

pub fn write_samples_csv(path: &Path, samples: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = samples.first().map_or(0, Vec::len);
    w.write_record((0..d).map(|i| format!("x{i}")))?;
    for x in samples {
        w.write_record(x.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalSummary {
    pub k: usize,
    pub j: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub final_loss: f64,
    pub lambda_check: f64,
    pub lip_cap: f64,
    pub rescale: f64,
    pub shrink: f64,
    pub param_movement: f64,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSummary {
    pub intervals: Vec<IntervalSummary>,
    pub total_params: usize,
}

/// One CSV per interval under `training/` plus the summary JSON.
pub fn write_training_logs(dir: &Path, logs: &[IntervalLog], params: &[usize]) -> Result<TrainingSummary> {
    let tdir = dir.join(TRAINING_DIR);
    ensure_dir(&tdir)?;
    for log in logs {
        let path = tdir.join(format!("interval_{:02}_{:03}.csv", log.k, log.j));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["iteration", "dsm_loss", "penalty", "lambda_hat", "wall_s"])?;
        for r in &log.records {
            w.serialize((r.iteration, r.dsm_loss, r.penalty, r.lambda_hat, r.wall_s))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    let summary = TrainingSummary {
        intervals: logs
            .iter()
            .zip(params)
            .map(|(l, &p)| IntervalSummary {
                k: l.k,
                j: l.j,
                t_start: l.t_start,
                t_end: l.t_end,
                final_loss: l.final_loss,
                lambda_check: l.lambda_check,
                lip_cap: l.lip_cap,
                rescale: l.rescale,
                shrink: l.shrink,
                param_movement: l.param_movement,
                params: p,
            })
            .collect(),
        total_params: params.iter().sum(),
    };
    write_json(&dir.join(TRAINING_SUMMARY), &summary)?;
    Ok(summary)
}

/// Writes `text` plus a newline to stdout, or to `path` when given.
pub fn emit(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, format!("{text}\n")).map_err(io_err(p)),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(io_err("<stdout>"))
        }
    }
}
