//! End-to-end runs: data → schedule → training → generation → evaluation,
//! and the sweep of that pipeline over the sample size.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use scoregen_core::forward::ForwardSpec;
use scoregen_core::metrics;
use scoregen_core::rng::Rng;
use scoregen_core::sampler::{self, Provenance, SampleRun};
use scoregen_core::schedule::rate_exponent;
use scoregen_core::trainer::{self, IntervalLog};
use scoregen_core::{MixtureTarget, ScoreModel, TanhNet, TimeSchedule};
use serde::Serialize;

use crate::checkpoint;
use crate::config::Config;
use crate::error::{Result, Stage};
use crate::io;
use crate::parallel;

pub const DATA_STREAM: u64 = 0x6461_7461;
pub const SAMPLE_STREAM: u64 = 0x7361_6d70;
pub const EVAL_STREAM: u64 = 0x6576_616c;
pub const FISHER_STREAM: u64 = 0x6669_7368;
pub const BOOTSTRAP_STREAM: u64 = 0x626f_6f74;

/// Everything a configuration determines before any training.
#[derive(Debug, Clone)]
pub struct Setup {
    pub cfg: Config,
    pub target: MixtureTarget,
    pub spec: ForwardSpec,
    pub schedule: TimeSchedule,
    pub run: SampleRun,
}

impl Setup {
    pub fn new(cfg: &Config) -> Result<Setup> {
        cfg.validate()?;
        let target = cfg.target()?;
        let spec = cfg.forward_spec()?;
        let schedule = cfg.time_schedule(target.dim())?;
        let run = cfg.sample_run(spec, &schedule)?;
        Ok(Setup { cfg: cfg.clone(), target, spec, schedule, run })
    }

    pub fn seed(&self) -> u64 {
        self.cfg.run.seed
    }

    /// The `n` training points.
    pub fn data(&self) -> Vec<Vec<f64>> {
        self.target.sample(&mut Rng::new(self.seed(), DATA_STREAM), self.cfg.schedule.n)
    }

    pub fn baseline(&self) -> ScoreModel {
        ScoreModel::zeros(self.schedule.clone(), self.spec.sigma(), self.target.dim())
    }

    pub fn train(&self) -> Result<(ScoreModel, Vec<IntervalLog>)> {
        parallel::train_all(&self.data(), &self.schedule, &self.spec, &self.cfg.train_config()).stage("train")
    }

    pub fn sample_rng(&self) -> Rng {
        Rng::new(self.seed(), SAMPLE_STREAM)
    }

    pub fn generate(&self, model: &ScoreModel) -> Result<(Vec<Vec<f64>>, Provenance)> {
        let rng = self.sample_rng();
        let xs = parallel::integrate(model, &self.run, self.cfg.sample.n_paths, &rng).stage("sample")?;
        Ok((xs, sampler::provenance(&self.run, self.cfg.sample.n_paths, &rng)))
    }

    /// Fresh target draws of the evaluation size; `key` selects independent copies.
    pub fn fresh(&self, key: u64) -> Vec<Vec<f64>> {
        self.target.sample(&mut Rng::new(self.seed(), EVAL_STREAM).substream(key), self.cfg.sample.n_paths)
    }
}

/// `{metric, method, value, std_error, n, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub metric: String,
    pub method: String,
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherInterval {
    pub k: usize,
    pub j: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub model: f64,
    pub model_se: f64,
    pub baseline: Option<f64>,
    pub baseline_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Generated samples against fresh target draws.
    pub w1: MetricRecord,
    /// Same comparison for the untrained model `−x/σ²`.
    pub w1_baseline: Option<MetricRecord>,
    /// Two independent fresh samples of the same size.
    pub noise_floor: MetricRecord,
    pub fisher: MetricRecord,
    pub fisher_baseline: Option<MetricRecord>,
    pub fisher_intervals: Vec<FisherInterval>,
}

fn w1_record(metric: &str, xs: &[Vec<f64>], ys: &[Vec<f64>], n_proj: usize, rng: &Rng) -> Result<MetricRecord> {
    let est = metrics::w1_sliced(xs, ys, n_proj, &mut rng.clone()).stage("evaluate")?;
    Ok(MetricRecord {
        metric: metric.into(),
        method: format!("{:?}", est.method),
        value: est.value,
        std_error: est.std_error,
        n: xs.len(),
        seed: rng.seed(),
    })
}

/// Fisher losses of `model` and, if configured, of the baseline on common draws.
pub fn fisher_comparison(setup: &Setup, model: &ScoreModel) -> Result<(MetricRecord, Option<MetricRecord>, Vec<FisherInterval>)> {
    let e = &setup.cfg.evaluate;
    let rng = Rng::new(setup.seed(), FISHER_STREAM);
    let fisher = |m: &ScoreModel| {
        parallel::fisher_by_interval(m, &setup.target, &setup.spec, &setup.schedule, e.fisher_nodes, e.fisher_draws, &rng)
            .stage("evaluate")
    };
    let ours = fisher(model)?;
    let base = if e.baseline { Some(fisher(&setup.baseline())?) } else { None };
    let record = |metric: &str, parts: &[trainer::FisherEstimate]| {
        let total = trainer::total_fisher(parts);
        MetricRecord {
            metric: metric.into(),
            method: "monte_carlo_midpoint".into(),
            value: total.value,
            std_error: total.std_error,
            n: e.fisher_draws,
            seed: setup.seed(),
        }
    };
    let intervals = setup
        .schedule
        .intervals()
        .iter()
        .enumerate()
        .map(|(i, &(k, j))| {
            let (t_start, t_end) = setup.schedule.interval(k, j);
            let b = base.as_ref().map(|b| b[i]);
            FisherInterval {
                k,
                j,
                t_start,
                t_end,
                model: ours[i].value,
                model_se: ours[i].std_error,
                baseline: b.map(|b| b.value),
                baseline_se: b.map(|b| b.std_error),
            }
        })
        .collect();
    Ok((record("fisher_loss", &ours), base.map(|b| record("fisher_loss_baseline", &b)), intervals))
}

/// Evaluates `samples` generated by `model`. The baseline is sampled with the
/// same generator so both ensembles share their noise.
pub fn evaluate(setup: &Setup, model: &ScoreModel, samples: &[Vec<f64>]) -> Result<Metrics> {
    let n_proj = setup.cfg.evaluate.n_proj;
    let eval = Rng::new(setup.seed(), EVAL_STREAM);
    let fresh = setup.fresh(0);
    let w1 = w1_record("w1", samples, &fresh, n_proj, &eval.substream(2))?;
    let w1_baseline = if setup.cfg.evaluate.baseline {
        let (baseline_samples, _) = setup.generate(&setup.baseline())?;
        Some(w1_record("w1_baseline", &baseline_samples, &fresh, n_proj, &eval.substream(2))?)
    } else {
        None
    };
    let noise_floor = w1_record("w1_noise_floor", &setup.fresh(1), &fresh, n_proj, &eval.substream(2))?;
    let (fisher, fisher_baseline, fisher_intervals) = fisher_comparison(setup, model)?;
    Ok(Metrics { w1, w1_baseline, noise_floor, fisher, fisher_baseline, fisher_intervals })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineResult {
    pub config_hash: String,
    pub checkpoint_sha256: String,
    pub samples_sha256: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub t_low: f64,
    pub t_high: f64,
    pub intervals: usize,
    pub total_params: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub train_s: f64,
    pub sample_s: f64,
    pub evaluate_s: f64,
}

impl Timing {
    pub fn total(&self) -> f64 {
        self.train_s + self.sample_s + self.evaluate_s
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub result: PipelineResult,
    pub timing: Timing,
    pub model: ScoreModel,
    pub logs: Vec<IntervalLog>,
    pub samples: Vec<Vec<f64>>,
}

/// Runs every stage; with `out`, also persists the snapshot, checkpoint,
/// samples, training logs and metrics there.
pub fn run_pipeline(cfg: &Config, out: Option<&Path>) -> Result<PipelineOutcome> {
    let setup = Setup::new(cfg)?;
    let t0 = Instant::now();
    let (model, logs) = setup.train()?;
    let t1 = Instant::now();
    let (samples, prov) = setup.generate(&model)?;
    let t2 = Instant::now();
    let metrics = evaluate(&setup, &model, &samples)?;
    let t3 = Instant::now();
    let timing = Timing {
        train_s: (t1 - t0).as_secs_f64(),
        sample_s: (t2 - t1).as_secs_f64(),
        evaluate_s: (t3 - t2).as_secs_f64(),
    };
    let ckpt = checkpoint::encode(&model);
    let config_hash = cfg.hash();
    let result = PipelineResult {
        config_hash: config_hash.clone(),
        checkpoint_sha256: io::sha256_hex(&ckpt),
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
    if let Some(dir) = out {
        io::ensure_dir(dir)?;
        io::write_snapshot(dir, &cfg.snapshot())?;
        let path = dir.join(io::CHECKPOINT_FILE);
        std::fs::write(&path, &ckpt).map_err(crate::error::io_err(&path))?;
        io::write_samples_bin(dir, &samples, &prov, &config_hash)?;
        let params: Vec<usize> = model.nets().iter().map(TanhNet::param_count).collect();
        io::write_training_logs(dir, &logs, &params)?;
        io::write_json(&dir.join(io::METRICS_FILE), &result)?;
        io::write_json(&dir.join("timing.json"), &timing)?;
    }
    Ok(PipelineOutcome { result, timing, model, logs, samples })
}

/// One `(n, seed)` job of the sweep; columns of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub seed: u64,
    pub w1: f64,
    pub fisher_loss: f64,
    /// W₁ between two fresh samples of size `n`.
    pub noise_floor: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub median_w1: f64,
    pub median_fisher: f64,
    pub median_noise_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `log median W₁` against `log n`.
    pub slope: f64,
    /// 95% percentile bootstrap interval of the slope, resampling repetitions within each `n`.
    pub slope_ci: [f64; 2],
    /// Adjacent pairs where the median W₁ increases with `n`.
    pub inversions: usize,
    /// `−(β+1)/(2β+d)`, for comparison.
    pub theoretical_exponent: f64,
    pub monotone: bool,
    pub slope_negative: bool,
    pub rows: Vec<SweepRow>,
}

pub fn median(vals: &[f64]) -> f64 {
    let mut v = vals.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `ys` on `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Percentile bootstrap of the log-log slope of per-group medians.
pub fn bootstrap_slope_ci(ns: &[usize], groups: &[Vec<f64>], resamples: usize, rng: &mut Rng) -> [f64; 2] {
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let mut slopes: Vec<f64> = (0..resamples)
        .map(|_| {
            let ly: Vec<f64> = groups
                .iter()
                .map(|g| {
                    let draw: Vec<f64> = (0..g.len()).map(|_| g[rng.below(g.len())]).collect();
                    median(&draw).ln()
                })
                .collect();
            ls_slope(&lx, &ly)
        })
        .collect();
    slopes.sort_by(f64::total_cmp);
    let at = |q: f64| slopes[((q * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
    [at(0.025), at(0.975)]
}

/// Runs the pipeline for every `(n, repetition)`; repetition `r` uses seed
/// `run.seed + r`. Writes `sweep.csv` and `sweep.json` into `out` when given.
pub fn rate_sweep(cfg: &Config, out: Option<&Path>) -> Result<SweepSummary> {
    let sw = &cfg.sweep;
    let jobs: Vec<(usize, u64)> =
        sw.ns.iter().flat_map(|&n| (0..sw.repetitions as u64).map(move |r| (n, cfg.run.seed + r))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let mut c = cfg.clone();
            c.schedule.n = n;
            c.run.seed = seed;
            c.evaluate.baseline = false;
            let started = Instant::now();
            let outcome = run_pipeline(&c, None)?;
            let setup = Setup::new(&c)?;
            let mut rng = Rng::new(seed, EVAL_STREAM).substream(3);
            let a = setup.target.sample(&mut rng, n);
            let b = setup.target.sample(&mut rng, n);
            let floor = metrics::w1_sliced(&a, &b, c.evaluate.n_proj, &mut rng).stage("sweep")?;
            Ok(SweepRow {
                n,
                seed,
                w1: outcome.result.metrics.w1.value,
                fisher_loss: outcome.result.metrics.fisher.value,
                noise_floor: floor.value,
                wall_s: started.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pick = |n: usize, f: fn(&SweepRow) -> f64| rows.iter().filter(|r| r.n == n).map(f).collect::<Vec<f64>>();
    let points: Vec<SweepPoint> = sw
        .ns
        .iter()
        .map(|&n| SweepPoint {
            n,
            median_w1: median(&pick(n, |r| r.w1)),
            median_fisher: median(&pick(n, |r| r.fisher_loss)),
            median_noise_floor: median(&pick(n, |r| r.noise_floor)),
        })
        .collect();
    let lx: Vec<f64> = sw.ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.median_w1.ln()).collect();
    let slope = ls_slope(&lx, &ly);
    let groups: Vec<Vec<f64>> = sw.ns.iter().map(|&n| pick(n, |r| r.w1)).collect();
    let slope_ci = bootstrap_slope_ci(&sw.ns, &groups, sw.bootstrap.max(1), &mut Rng::new(cfg.run.seed, BOOTSTRAP_STREAM));
    let inversions = points.windows(2).filter(|w| w[1].median_w1 > w[0].median_w1).count();
    let d = cfg.target()?.dim();
    let summary = SweepSummary {
        theoretical_exponent: -rate_exponent(cfg.schedule.beta, d),
        monotone: inversions <= 1,
        slope_negative: slope < 0.0 && slope_ci[1] < 0.0,
        points,
        slope,
        slope_ci,
        inversions,
        rows,
    };
    if let Some(dir) = out {
        io::ensure_dir(dir)?;
        io::write_snapshot(dir, &cfg.snapshot())?;
        let mut w = csv::Writer::from_path(dir.join(io::SWEEP_CSV))?;
        for row in &summary.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(crate::error::io_err(dir.join(io::SWEEP_CSV)))?;
        io::write_json(&dir.join(io::SWEEP_JSON), &summary)?;
    }
    Ok(summary)
}
