//! Backward-time generation: integrates
//! `dX̂_s = α(T̄−s)·[X̂_s + (σ² + b_s²) ŝ(T̄−s, X̂_s)] ds + √(2α(T̄−s)) b_s dB_s`
//! from `N(0, σ²I)` over `s ∈ [0, T̄ − T̲]`. With the unit noise schedule
//! `α ≡ 1` this is the plain reversed Ornstein–Uhlenbeck family.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::forward::ForwardSpec;
use crate::math::{self, Float};
use crate::rng::Rng;
use crate::schedule::{Fnv64, TimeSchedule};
use crate::scorenet::{ScoreField, ScoreSlice};

pub const BLOWUP_RADIUS: f64 = 1e6;

/// Backward diffusion coefficient `b_s`, indexed by backward time.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DiffusionProfile {
    /// `b ≡ 0`: probability-flow ODE.
    Ode,
    /// `b ≡ σ`.
    Ddpm,
    Constant(f64),
    /// Square wave: `0` on the first half of each period, `c` on the second.
    Alternating { c: f64, period: f64 },
    /// Piecewise constant: `values[i]` on `[times[i], times[i+1])`, last value thereafter.
    Custom { times: Vec<f64>, values: Vec<f64> },
}

impl DiffusionProfile {
    pub fn b(&self, sigma: f64, s: f64) -> f64 {
        match self {
            DiffusionProfile::Ode => 0.0,
            DiffusionProfile::Ddpm => sigma,
            DiffusionProfile::Constant(c) => *c,
            DiffusionProfile::Alternating { c, period } => {
                let phase = (s / period).fract();
                if phase < 0.5 {
                    0.0
                } else {
                    *c
                }
            }
            DiffusionProfile::Custom { times, values } => {
                let idx = times.partition_point(|&t| t <= s);
                values[idx.saturating_sub(1)]
            }
        }
    }

    /// `sup_s |b_s|`.
    pub fn bound(&self, sigma: f64) -> f64 {
        match self {
            DiffusionProfile::Ode => 0.0,
            DiffusionProfile::Ddpm => sigma.abs(),
            DiffusionProfile::Constant(c) | DiffusionProfile::Alternating { c, .. } => c.abs(),
            DiffusionProfile::Custom { values, .. } => values.iter().fold(0.0, |a, v| a.max(v.abs())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DiffusionProfile::Constant(c) if !c.is_finite() => Err(Error::InvalidParams("profile constant must be finite")),
            DiffusionProfile::Alternating { c, period } if !c.is_finite() || !(*period > 0.0) => {
                Err(Error::InvalidParams("alternating profile needs finite c and positive period"))
            }
            DiffusionProfile::Custom { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::InvalidParams("custom profile needs equal-length nonempty tables"));
                }
                if times.windows(2).any(|w| !(w[0] < w[1])) || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParams("custom profile times must increase and values be finite"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DiffusionProfile::Ode => "ode".into(),
            DiffusionProfile::Ddpm => "ddpm".into(),
            DiffusionProfile::Constant(c) => alloc::format!("constant({c})"),
            DiffusionProfile::Alternating { c, period } => alloc::format!("alternating({c},{period})"),
            DiffusionProfile::Custom { times, .. } => alloc::format!("custom({} knots)", times.len()),
        }
    }

    fn hash_into(&self, h: &mut Fnv64) {
        match self {
            DiffusionProfile::Ode => h.write_u64(0),
            DiffusionProfile::Ddpm => h.write_u64(1),
            DiffusionProfile::Constant(c) => {
                h.write_u64(2);
                h.write_f64(*c);
            }
            DiffusionProfile::Alternating { c, period } => {
                h.write_u64(3);
                h.write_f64(*c);
                h.write_f64(*period);
            }
            DiffusionProfile::Custom { times, values } => {
                h.write_u64(4);
                times.iter().chain(values).for_each(|v| h.write_f64(*v));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Integrator {
    EulerMaruyama,
    /// Exact flow of the linear part with the score frozen over each step.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StepGrid {
    Uniform,
    /// Forward times geometrically spaced from `T̄` down to `T̲`, so steps
    /// shrink where the score grows.
    Geometric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    pub spec: ForwardSpec,
    pub t_low: f64,
    pub t_high: f64,
    pub profile: DiffusionProfile,
    pub n_steps: usize,
    pub integrator: Integrator,
    pub grid: StepGrid,
}

impl SampleRun {
    pub fn new(spec: ForwardSpec, t_low: f64, t_high: f64, profile: DiffusionProfile, n_steps: usize) -> Result<Self> {
        if !(t_low > 0.0 && t_high > t_low && t_high.is_finite()) {
            return Err(Error::InvalidParams("need 0 < t_low < t_high < inf"));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParams("n_steps must be at least 1"));
        }
        profile.validate()?;
        Ok(SampleRun { spec, t_low, t_high, profile, n_steps, integrator: Integrator::EulerMaruyama, grid: StepGrid::Uniform })
    }

    pub fn for_schedule(spec: ForwardSpec, schedule: &TimeSchedule, profile: DiffusionProfile, n_steps: usize) -> Result<Self> {
        Self::new(spec, schedule.t_low(), schedule.t_high(), profile, n_steps)
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_grid(mut self, grid: StepGrid) -> Self {
        self.grid = grid;
        self
    }

    /// Backward horizon `T̄ − T̲`.
    pub fn horizon(&self) -> f64 {
        self.t_high - self.t_low
    }

    /// Backward times `0 = s_0 < … < s_N = T̄ − T̲`.
    pub fn step_times(&self) -> Vec<f64> {
        let n = self.n_steps;
        let horizon = self.horizon();
        (0..=n)
            .map(|i| {
                if i == n {
                    return horizon;
                }
                let f = i as f64 / n as f64;
                match self.grid {
                    StepGrid::Uniform => horizon * f,
                    StepGrid::Geometric => self.t_high - self.t_high * (self.t_low / self.t_high).powf(f),
                }
            })
            .collect()
    }

    pub fn config_hash(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write_f64(self.spec.sigma());
        h.write(alloc::format!("{:?}", self.spec.schedule()).as_bytes());
        h.write_f64(self.t_low);
        h.write_f64(self.t_high);
        self.profile.hash_into(&mut h);
        h.write_u64(self.n_steps as u64);
        h.write_u64(self.integrator as u64);
        h.write_u64(self.grid as u64);
        h.finish()
    }
}

/// `â_s(x) = x + (σ² + b_s²)·ŝ(T̄ − s, x)` (unit-rate clock).
pub fn drift(score: &dyn ScoreField, profile: &DiffusionProfile, sigma: f64, t_high: f64, s: f64, x: &[f64]) -> Result<Vec<f64>> {
    let b = profile.b(sigma, s);
    let mut out = score.score(t_high - s, x)?;
    let c = sigma * sigma + b * b;
    for (o, xi) in out.iter_mut().zip(x) {
        *o = xi + c * *o;
    }
    Ok(out)
}

/// Per-path generator: path `i` draws its start and all its noise from
/// `rng.substream(i)`, so results do not depend on how paths are batched.
pub fn path_rng(rng: &Rng, i: usize) -> Rng {
    rng.substream(i as u64)
}

/// `N(0, σ²I)` starting points and the per-path generators positioned after them.
pub fn initial_states(run: &SampleRun, d: usize, n_paths: usize, rng: &Rng) -> (Vec<Vec<f64>>, Vec<Rng>) {
    let sigma = run.spec.sigma();
    let mut xs = Vec::with_capacity(n_paths);
    let mut rngs = Vec::with_capacity(n_paths);
    for i in 0..n_paths {
        let mut r = path_rng(rng, i);
        let mut x = vec![0.0; d];
        r.fill_gaussian(&mut x);
        x.iter_mut().for_each(|v| *v *= sigma);
        xs.push(x);
        rngs.push(r);
    }
    (xs, rngs)
}

/// Advances every path in `xs` across step `step` of `times`, using one
/// frozen-time score slice for the whole chunk.
pub fn advance_chunk(
    score: &dyn ScoreField,
    run: &SampleRun,
    times: &[f64],
    step: usize,
    xs: &mut [Vec<f64>],
    rngs: &mut [Rng],
) -> Result<()> {
    let (s0, s1) = (times[step], times[step + 1]);
    let h = s1 - s0;
    let sigma = run.spec.sigma();
    let t_fwd = run.t_high - s0;
    let rate = run.spec.schedule().rate(t_fwd);
    let b = run.profile.b(sigma, s0);
    let c = sigma * sigma + b * b;
    let slice = score.at_time(t_fwd)?;
    let d = score.dim();
    let mut sc = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let (lin, shift, noise_sd) = match run.integrator {
        Integrator::EulerMaruyama => (1.0 + rate * h, rate * h * c, b * (2.0 * rate * h).sqrt()),
        Integrator::Exponential => {
            let a = rate * h;
            let em1 = a.exp_m1();
            (1.0 + em1, em1 * c, b.abs() * (2.0 * a).exp_m1().sqrt())
        }
    };
    for (x, r) in xs.iter_mut().zip(rngs.iter_mut()) {
        step_one(&*slice, x, r, &mut sc, &mut noise, lin, shift, noise_sd)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn step_one(
    slice: &dyn ScoreSlice,
    x: &mut [f64],
    rng: &mut Rng,
    sc: &mut [f64],
    noise: &mut [f64],
    lin: f64,
    shift: f64,
    noise_sd: f64,
) -> Result<()> {
    slice.eval(x, sc);
    if noise_sd != 0.0 {
        rng.fill_gaussian(noise);
    } else {
        noise.iter_mut().for_each(|v| *v = 0.0);
    }
    for i in 0..x.len() {
        x[i] = lin * x[i] + shift * sc[i] + noise_sd * noise[i];
    }
    let r = math::norm(x);
    if !(r <= BLOWUP_RADIUS) {
        return Err(Error::NonFinite("sampler state left the blowup ball"));
    }
    Ok(())
}

/// Runs all paths to `s = T̄ − T̲`, returning `X̂_{T̄−T̲}`.
pub fn integrate(score: &dyn ScoreField, run: &SampleRun, n_paths: usize, rng: &Rng) -> Result<Vec<Vec<f64>>> {
    Ok(integrate_with_snapshots(score, run, n_paths, rng, &[])?.0)
}

/// Final states and the requested snapshots.
pub type Trajectory = (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>);

/// Like [`integrate`], additionally cloning the ensemble after each step index
/// listed in `snapshot_steps` (1-based: `k` means after `k` steps).
pub fn integrate_with_snapshots(
    score: &dyn ScoreField,
    run: &SampleRun,
    n_paths: usize,
    rng: &Rng,
    snapshot_steps: &[usize],
) -> Result<Trajectory> {
    let d = score.dim();
    let times = run.step_times();
    let (mut xs, mut rngs) = initial_states(run, d, n_paths, rng);
    let mut snaps = Vec::with_capacity(snapshot_steps.len());
    if snapshot_steps.contains(&0) {
        snaps.push(xs.clone());
    }
    for step in 0..run.n_steps {
        if n_paths > 0 {
            advance_chunk(score, run, &times, step, &mut xs, &mut rngs)?;
        }
        if snapshot_steps.contains(&(step + 1)) {
            snaps.push(xs.clone());
        }
    }
    Ok((xs, snaps))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Provenance {
    pub config_hash: u64,
    pub seed: u64,
    pub stream_id: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub t_low: f64,
    pub t_high: f64,
    pub profile: String,
    pub integrator: Integrator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub samples: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

pub fn provenance(run: &SampleRun, n_paths: usize, rng: &Rng) -> Provenance {
    Provenance {
        config_hash: run.config_hash(),
        seed: rng.seed(),
        stream_id: rng.stream_id(),
        n_paths,
        n_steps: run.n_steps,
        t_low: run.t_low,
        t_high: run.t_high,
        profile: run.profile.label(),
        integrator: run.integrator,
    }
}

pub fn generate(score: &dyn ScoreField, run: &SampleRun, n_paths: usize, rng: &Rng) -> Result<Generated> {
    let samples = integrate(score, run, n_paths, rng)?;
    Ok(Generated { samples, provenance: provenance(run, n_paths, rng) })
}
