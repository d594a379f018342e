//! Rayon drivers for the core loops. Work is split on fixed boundaries
//! (intervals, path chunks of [`PATH_CHUNK`]) and every unit owns its own
//! substream, so outputs are bitwise identical for any thread count.

use std::time::Instant;

use rayon::prelude::*;
use scoregen_core::forward::ForwardSpec;
use scoregen_core::rng::Rng;
use scoregen_core::sampler::{self, SampleRun, Trajectory};
use scoregen_core::scorenet::{ScoreField, ScoreModel};
use scoregen_core::trainer::{self, FisherEstimate, IntervalLog, TrainConfig};
use scoregen_core::{MixtureTarget, Result, TimeSchedule};

pub const PATH_CHUNK: usize = 256;

/// Trains every fine interval concurrently; results are in schedule order.
pub fn train_all(
    data: &[Vec<f64>],
    schedule: &TimeSchedule,
    spec: &ForwardSpec,
    cfg: &TrainConfig,
) -> Result<(ScoreModel, Vec<IntervalLog>)> {
    let parts = schedule
        .intervals()
        .par_iter()
        .map(|&(k, j)| {
            let started = Instant::now();
            let clock = move || started.elapsed().as_secs_f64();
            trainer::train_interval_with_clock(data, schedule, spec, cfg, k, j, &clock)
        })
        .collect::<Result<Vec<_>>>()?;
    let (nets, logs): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok((ScoreModel::from_nets(schedule.clone(), spec.sigma(), nets)?, logs))
}

pub fn integrate(score: &(dyn ScoreField + Sync), run: &SampleRun, n_paths: usize, rng: &Rng) -> Result<Vec<Vec<f64>>> {
    Ok(integrate_with_snapshots(score, run, n_paths, rng, &[])?.0)
}

/// Same output as [`sampler::integrate_with_snapshots`], computed chunk-parallel.
pub fn integrate_with_snapshots(
    score: &(dyn ScoreField + Sync),
    run: &SampleRun,
    n_paths: usize,
    rng: &Rng,
    snapshot_steps: &[usize],
) -> Result<Trajectory> {
    let times = run.step_times();
    let (mut xs, mut rngs) = sampler::initial_states(run, score.dim(), n_paths, rng);
    let chunk_snaps = xs
        .par_chunks_mut(PATH_CHUNK)
        .zip(rngs.par_chunks_mut(PATH_CHUNK))
        .map(|(xc, rc)| {
            let mut snaps = Vec::new();
            if snapshot_steps.contains(&0) {
                snaps.push(xc.to_vec());
            }
            for step in 0..run.n_steps {
                sampler::advance_chunk(score, run, &times, step, xc, rc)?;
                if snapshot_steps.contains(&(step + 1)) {
                    snaps.push(xc.to_vec());
                }
            }
            Ok(snaps)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_snaps = chunk_snaps.first().map_or(0, Vec::len);
    let mut snaps = vec![Vec::with_capacity(n_paths); n_snaps];
    for chunk in chunk_snaps {
        for (dst, src) in snaps.iter_mut().zip(chunk) {
            dst.extend(src);
        }
    }
    Ok((xs, snaps))
}

/// [`trainer::fisher_by_interval`] with intervals evaluated concurrently.
pub fn fisher_by_interval(
    score: &(dyn ScoreField + Sync),
    target: &MixtureTarget,
    spec: &ForwardSpec,
    schedule: &TimeSchedule,
    n_time: usize,
    n_mc: usize,
    rng: &Rng,
) -> Result<Vec<FisherEstimate>> {
    schedule
        .intervals()
        .par_iter()
        .enumerate()
        .map(|(i, &(k, j))| {
            trainer::fisher_loss(score, target, spec, schedule.interval(k, j), n_time, n_mc, &rng.substream(i as u64))
        })
        .collect()
}

/// Runs `f` on a pool of `threads` workers (0: rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
