//! Executable checks of the structural results: the denoising identity,
//! marginal reversal, and stability of SDE marginals under changes of the
//! initial law and of the drift. Every check emits a [`CheckReport`].

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::forward::ForwardSpec;
use crate::linalg::Matrix;
use crate::math::{self, Float};
use crate::metrics::{self, mean_and_se};
use crate::oracle;
use crate::rng::Rng;
use crate::sampler::{self, SampleRun, Trajectory};
use crate::scorenet::ScoreField;
use crate::targets::{MixtureTarget, SubGaussianCert};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CheckReport {
    pub check: String,
    pub case: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs / lhs` (infinite when `lhs = 0 < rhs`).
    pub slack: f64,
    pub pass: bool,
    pub seed: u64,
    pub details: BTreeMap<String, f64>,
}

impl CheckReport {
    fn new(check: &str, case: &str, lhs: f64, rhs: f64, seed: u64) -> Self {
        let slack = if lhs == 0.0 {
            if rhs > 0.0 {
                f64::INFINITY
            } else {
                1.0
            }
        } else {
            rhs / lhs
        };
        CheckReport {
            check: check.into(),
            case: case.into(),
            lhs,
            rhs,
            slack,
            pass: lhs <= rhs,
            seed,
            details: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.into(), value);
        self
    }
}

/// Denoising identity at fixed `t`: `Δᵢ = DSM(sᵢ) − MSE(sᵢ)` does not depend on
/// the candidate. Both candidates see the same `(X₀, Z)` draws; passes iff
/// `|mean(Δ₁ − Δ₂)| ≤ 3·SE`.
#[allow(clippy::too_many_arguments)]
pub fn check_denoising_trick(
    target: &MixtureTarget,
    spec: &ForwardSpec,
    t: f64,
    s1: &dyn ScoreField,
    s2: &dyn ScoreField,
    n_mc: usize,
    rng: &Rng,
    case: &str,
) -> Result<CheckReport> {
    if !(t > 0.0) || n_mc < 2 {
        return Err(Error::InvalidParams("denoising check needs t > 0 and at least two draws"));
    }
    let d = target.dim();
    let u = spec.marginal_time(t)?;
    let decay = (-u).exp();
    let st = spec.sigma_t(u);
    let marg = oracle::marginal_at(target, spec, t)?;
    let (a, b) = (s1.at_time(t)?, s2.at_time(t)?);
    let x0 = target.sample(&mut rng.substream(0), n_mc);
    let mut noise = rng.substream(1);
    let (mut z, mut x, mut v1, mut v2, mut vs) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut gaps = Vec::with_capacity(n_mc);
    let (mut sum1, mut sum2) = (0.0, 0.0);
    for x0 in &x0 {
        noise.fill_gaussian(&mut z);
        for i in 0..d {
            x[i] = decay * x0[i] + st * z[i];
        }
        a.eval(&x, &mut v1);
        b.eval(&x, &mut v2);
        marg.mixture.grad_log_density_into(&x, &mut vs);
        let delta = |v: &[f64]| {
            let dsm: f64 = v.iter().zip(&z).map(|(vi, zi)| (vi + zi / st).powi(2)).sum();
            let mse: f64 = v.iter().zip(&vs).map(|(vi, si)| (vi - si).powi(2)).sum();
            dsm - mse
        };
        let (d1, d2) = (delta(&v1), delta(&v2));
        sum1 += d1;
        sum2 += d2;
        gaps.push(d1 - d2);
    }
    let (gap, se) = mean_and_se(&gaps);
    Ok(CheckReport::new("denoising_trick", case, gap.abs(), 3.0 * se, rng.seed())
        .with("t", t)
        .with("n_mc", n_mc as f64)
        .with("delta1", sum1 / n_mc as f64)
        .with("delta2", sum2 / n_mc as f64)
        .with("std_error", se))
}

/// Tolerance model for sliced-W₁ comparisons against forward marginals:
/// `floor_mult · (two-sample noise floor) + disc_coef · h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversalConfig {
    /// Fractions of `T̄ − T̲` at which the backward ensemble is compared.
    pub fractions: Vec<f64>,
    pub n_proj: usize,
    pub floor_mult: f64,
    pub disc_coef: f64,
}

impl Default for ReversalConfig {
    fn default() -> Self {
        ReversalConfig { fractions: vec![0.25, 0.5, 1.0], n_proj: 64, floor_mult: 3.0, disc_coef: 1.0 }
    }
}

/// Sliced W₁ between two independent forward-marginal samples at `t`.
pub fn noise_floor(target: &MixtureTarget, spec: &ForwardSpec, t: f64, n: usize, n_proj: usize, rng: &Rng) -> Result<f64> {
    let a = spec.marginal_sample(target, &rng.substream(0), t, n)?;
    let b = spec.marginal_sample(target, &rng.substream(1), t, n)?;
    Ok(metrics::w1_sliced(&a, &b, n_proj, &mut rng.substream(2))?.value)
}

/// Ensemble integrator: `(run, n_paths, rng, snapshot_steps) -> (final, snapshots)`,
/// with the score already bound. Lets callers swap in a parallel driver.
pub type Integrate<'a> = &'a dyn Fn(&SampleRun, usize, &Rng, &[usize]) -> Result<Trajectory>;

/// Backward ensembles at the configured fractions of the horizon against fresh
/// forward samples at the mirrored times.
pub fn check_marginal_reversal(
    score: &dyn ScoreField,
    target: &MixtureTarget,
    run: &SampleRun,
    n_paths: usize,
    cfg: &ReversalConfig,
    rng: &Rng,
    case: &str,
) -> Result<Vec<CheckReport>> {
    let integrate = |run: &SampleRun, n: usize, rng: &Rng, steps: &[usize]| sampler::integrate_with_snapshots(score, run, n, rng, steps);
    check_marginal_reversal_with(&integrate, target, run, n_paths, cfg, rng, case)
}

/// Step indices for the configured horizon fractions.
pub fn snapshot_steps(run: &SampleRun, fractions: &[f64]) -> Vec<usize> {
    fractions.iter().map(|f| ((f * run.n_steps as f64).round() as usize).clamp(1, run.n_steps)).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn check_marginal_reversal_with(
    integrate: Integrate<'_>,
    target: &MixtureTarget,
    run: &SampleRun,
    n_paths: usize,
    cfg: &ReversalConfig,
    rng: &Rng,
    case: &str,
) -> Result<Vec<CheckReport>> {
    let times = run.step_times();
    let steps = snapshot_steps(run, &cfg.fractions);
    let (_, snaps) = integrate(run, n_paths, &rng.substream(0), &steps)?;
    let mut sorted = steps.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let h = run.horizon() / run.n_steps as f64;
    let mut out = Vec::with_capacity(steps.len());
    for (i, &step) in steps.iter().enumerate() {
        let snap = &snaps[sorted.binary_search(&step).expect("snapshot recorded")];
        let s = times[step];
        let t_fwd = (run.t_high - s).max(run.t_low);
        let key = 1 + i as u64;
        let fresh = run.spec.marginal_sample(target, &rng.substream_path(&[key, 0]), t_fwd, n_paths)?;
        let w = metrics::w1_sliced(snap, &fresh, cfg.n_proj, &mut rng.substream_path(&[key, 1]))?;
        let floor = noise_floor(target, &run.spec, t_fwd, n_paths, cfg.n_proj, &rng.substream_path(&[key, 2]))?;
        let tol = cfg.floor_mult * floor + cfg.disc_coef * h;
        out.push(
            CheckReport::new("marginal_reversal", case, w.value, tol, rng.seed())
                .with("backward_time", s)
                .with("forward_time", t_fwd)
                .with("noise_floor", floor)
                .with("std_error", w.std_error)
                .with("n_paths", n_paths as f64)
                .with("n_steps", run.n_steps as f64),
        );
    }
    Ok(out)
}

/// Output ensembles of two backward runs (same score, different profiles or
/// integrators) against each other, with tolerance from the noise floor at `T̲`.
#[allow(clippy::too_many_arguments)]
pub fn check_profile_agreement(
    score: &dyn ScoreField,
    target: &MixtureTarget,
    run_a: &SampleRun,
    run_b: &SampleRun,
    n_paths: usize,
    cfg: &ReversalConfig,
    rng: &Rng,
    case: &str,
) -> Result<CheckReport> {
    let integrate = |run: &SampleRun, n: usize, rng: &Rng, steps: &[usize]| sampler::integrate_with_snapshots(score, run, n, rng, steps);
    check_profile_agreement_with(&integrate, target, run_a, run_b, n_paths, cfg, rng, case)
}

#[allow(clippy::too_many_arguments)]
pub fn check_profile_agreement_with(
    integrate: Integrate<'_>,
    target: &MixtureTarget,
    run_a: &SampleRun,
    run_b: &SampleRun,
    n_paths: usize,
    cfg: &ReversalConfig,
    rng: &Rng,
    case: &str,
) -> Result<CheckReport> {
    let (a, _) = integrate(run_a, n_paths, &rng.substream(0), &[])?;
    let (b, _) = integrate(run_b, n_paths, &rng.substream(1), &[])?;
    let w = metrics::w1_sliced(&a, &b, cfg.n_proj, &mut rng.substream(2))?;
    let floor = noise_floor(target, &run_a.spec, run_a.t_low, n_paths, cfg.n_proj, &rng.substream(3))?;
    let h = run_a.horizon() / run_a.n_steps.min(run_b.n_steps) as f64;
    let tol = cfg.floor_mult * floor + cfg.disc_coef * h;
    Ok(CheckReport::new("profile_agreement", case, w.value, tol, rng.seed())
        .with("noise_floor", floor)
        .with("std_error", w.std_error))
}

/// Sample mean and covariance of `xs` against analytic values, one report per
/// entry (means first, then the upper triangle of the covariance), each
/// passing iff the deviation is at most 3 standard errors.
pub fn check_moments(xs: &[Vec<f64>], mean: &[f64], cov: &Matrix, seed: u64, case: &str) -> Result<Vec<CheckReport>> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidParams("moment check needs at least two samples"));
    }
    let d = mean.len();
    let mut out = Vec::new();
    let mut centered = vec![0.0; n];
    let mut sample_mean = vec![0.0; d];
    for i in 0..d {
        for (c, x) in centered.iter_mut().zip(xs) {
            *c = x[i];
        }
        let (m, se) = mean_and_se(&centered);
        sample_mean[i] = m;
        out.push(CheckReport::new("moments", case, (m - mean[i]).abs(), 3.0 * se, seed).with("i", i as f64).with("estimate", m).with("expected", mean[i]));
    }
    for i in 0..d {
        for j in i..d {
            for (c, x) in centered.iter_mut().zip(xs) {
                *c = (x[i] - sample_mean[i]) * (x[j] - sample_mean[j]);
            }
            let (m, se) = mean_and_se(&centered);
            let m = m * n as f64 / (n - 1) as f64;
            out.push(
                CheckReport::new("moments", case, (m - cov[(i, j)]).abs(), 3.0 * se, seed)
                    .with("i", i as f64)
                    .with("j", j as f64)
                    .with("estimate", m)
                    .with("expected", cov[(i, j)]),
            );
        }
    }
    Ok(out)
}

/// A pair of Gaussian initial laws with closed-form `L¹` distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GaussianPair {
    /// `N(0, I_d)` against `N(δ e₁, I_d)`.
    MeanShift { d: usize, delta: f64 },
    /// `N(0, s₁²)` against `N(0, s₂²)` on the line.
    VarianceScale { s1: f64, s2: f64 },
}

impl GaussianPair {
    pub fn dim(&self) -> usize {
        match *self {
            GaussianPair::MeanShift { d, .. } => d,
            GaussianPair::VarianceScale { .. } => 1,
        }
    }

    /// `‖p − p̃‖_{L¹}`.
    pub fn l1_distance(&self) -> f64 {
        match *self {
            // Only the e₁ marginal differs: 2(2Φ(δ/2) − 1).
            GaussianPair::MeanShift { delta, .. } => 2.0 * math::erf(delta.abs() / (2.0 * core::f64::consts::SQRT_2)),
            GaussianPair::VarianceScale { s1, s2 } => {
                let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
                if lo == hi {
                    return 0.0;
                }
                // The densities cross at ±c.
                let c = lo * hi * (2.0 * (hi / lo).ln() / (hi * hi - lo * lo)).sqrt();
                4.0 * (math::normal_cdf(c / lo) - math::normal_cdf(c / hi))
            }
        }
    }

    pub fn laws(&self) -> Result<(MixtureTarget, MixtureTarget)> {
        match *self {
            GaussianPair::MeanShift { d, delta } => {
                let mut m = vec![0.0; d];
                m[0] = delta;
                Ok((MixtureTarget::gaussian(vec![0.0; d], Matrix::identity(d))?, MixtureTarget::gaussian(m, Matrix::identity(d))?))
            }
            GaussianPair::VarianceScale { s1, s2 } => Ok((
                MixtureTarget::gaussian(vec![0.0], Matrix::from_diag(&[s1 * s1]))?,
                MixtureTarget::gaussian(vec![0.0], Matrix::from_diag(&[s2 * s2]))?,
            )),
        }
    }

    /// Coupled draws: `X̃₀` is the image of `X₀` under the map pushing `p` to `p̃`.
    pub fn coupled_sample(&self, rng: &mut Rng, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let d = self.dim();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            let mut z = vec![0.0; d];
            rng.fill_gaussian(&mut z);
            match *self {
                GaussianPair::MeanShift { delta, .. } => {
                    let mut zz = z.clone();
                    zz[0] += delta;
                    a.push(z);
                    b.push(zz);
                }
                GaussianPair::VarianceScale { s1, s2 } => {
                    a.push(vec![s1 * z[0]]);
                    b.push(vec![s2 * z[0]]);
                }
            }
        }
        (a, b)
    }
}

/// Drift `a(t, x, out)`.
pub type Drift<'a> = dyn Fn(f64, &[f64], &mut [f64]) + Sync + 'a;
pub type DriftFn<'a> = &'a Drift<'a>;

/// Shared-drift SDE pair `dX = a_t(X)dt + r dB` on `[τ̲, τ̄]` from the two laws of a
/// Gaussian pair.
pub struct InitialStability<'a> {
    pub pair: GaussianPair,
    pub drift: DriftFn<'a>,
    /// Claimed `sup ‖a_t‖`; checked along every simulated path.
    pub v_bound: f64,
    /// Constant diffusion coefficient.
    pub r: f64,
    pub tau: (f64, f64),
    pub n_steps: usize,
    pub n_paths: usize,
}

/// Bound `((τ̄−τ̲)V + √d M + √(L log(1/ε)))‖p − p̃‖_{L¹} + Lε/2` for initial laws, minimized over
/// a grid of `ε` (each with its own certified `L`). Returns `(bound, ε, L)`.
pub fn initial_stability_bound(pair: &GaussianPair, horizon: f64, v: f64, m: f64) -> Result<(f64, f64, f64)> {
    let (p, q) = pair.laws()?;
    let l1 = pair.l1_distance();
    let d = pair.dim() as f64;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for k in 1..=48 {
        let eps = 10f64.powf(-(k as f64) / 4.0);
        let l = SubGaussianCert::for_target(&p, eps).kappa.max(SubGaussianCert::for_target(&q, eps).kappa);
        let bound = (horizon * v + d.sqrt() * m + (l * (1.0 / eps).ln()).sqrt()) * l1 + l * eps / 2.0;
        if bound < best.0 {
            best = (bound, eps, l);
        }
    }
    Ok(best)
}

/// Simulates both processes under common noise and compares the paired final
/// ensembles with the initial-law bound. The left side is the mean coupled
/// distance `E‖X_τ̄ − X̃_τ̄‖`, which dominates both the population and the
/// empirical W₁.
pub fn check_stability_initial(setup: &InitialStability<'_>, rng: &Rng, case: &str) -> Result<CheckReport> {
    let d = setup.pair.dim();
    let (mut xa, mut xb) = setup.pair.coupled_sample(&mut rng.substream(0), setup.n_paths);
    let (t0, t1) = setup.tau;
    let h = (t1 - t0) / setup.n_steps as f64;
    let mut noise = vec![0.0; d];
    let (mut fa, mut fb) = (vec![0.0; d], vec![0.0; d]);
    let mut max_drift: f64 = 0.0;
    for (i, (a, b)) in xa.iter_mut().zip(xb.iter_mut()).enumerate() {
        let mut path = rng.substream_path(&[1, i as u64]);
        for step in 0..setup.n_steps {
            let t = t0 + step as f64 * h;
            (setup.drift)(t, a, &mut fa);
            (setup.drift)(t, b, &mut fb);
            max_drift = max_drift.max(math::norm(&fa)).max(math::norm(&fb));
            path.fill_gaussian(&mut noise);
            for k in 0..d {
                let dw = setup.r * h.sqrt() * noise[k];
                a[k] += fa[k] * h + dw;
                b[k] += fb[k] * h + dw;
            }
        }
    }
    if max_drift > setup.v_bound * (1.0 + 1e-12) {
        return Err(Error::InvalidParams("drift exceeded its declared sup bound"));
    }
    let dists: Vec<f64> = xa.iter().zip(&xb).map(|(a, b)| math::dist(a, b)).collect();
    let (lhs, se) = mean_and_se(&dists);
    let m = setup.r * (t1 - t0).sqrt();
    let (rhs, eps, l) = initial_stability_bound(&setup.pair, t1 - t0, setup.v_bound, m)?;
    let mut report = CheckReport::new("stability_initial", case, lhs, rhs, rng.seed())
        .with("l1_distance", setup.pair.l1_distance())
        .with("eps", eps)
        .with("L", l)
        .with("M", m)
        .with("V", setup.v_bound)
        .with("std_error", se);
    if setup.n_paths <= 1024 {
        report = report.with("w1_exact", metrics::w1_exact(&xa, &xb)?);
    }
    Ok(report)
}

/// Drift pair `(a, ā)` with a one-sided Lipschitz profile `L̄_t ≥ sup_x λ_max(∇ā_t)`.
pub struct DriftStability<'a> {
    pub drift: DriftFn<'a>,
    pub drift_bar: DriftFn<'a>,
    pub lip_bar: &'a (dyn Fn(f64) -> f64 + Sync),
    pub r: f64,
    pub tau: (f64, f64),
    pub n_steps: usize,
    pub n_paths: usize,
    /// Allowance added to the closed-form comparison, if any (see [`check_stability_drift`]).
    pub analytic_gap: Option<f64>,
}

/// Synchronous coupling from common initial draws `x0` and common noise.
/// The right side `∫∫ e^{∫_t^τ̄ L̄} ‖a_t − ā_t‖ p_t dx dt` is accumulated along the
/// `a`-trajectories (left-point rule); the left side is the mean coupled distance.
/// With `analytic_gap = Some(g)` the report also records `|lhs − g|` against
/// `3·SE + first-order discretization allowance`, and the check passes only if
/// that comparison holds too.
pub fn check_stability_drift(setup: &DriftStability<'_>, x0: &[Vec<f64>], rng: &Rng, case: &str) -> Result<CheckReport> {
    if x0.len() < setup.n_paths {
        return Err(Error::SizeMismatch { left: x0.len(), right: setup.n_paths });
    }
    let d = x0.first().map_or(0, |x| x.len());
    let (t0, t1) = setup.tau;
    let n = setup.n_steps;
    let h = (t1 - t0) / n as f64;
    // w[i] = exp(∫_{t_i}^{τ̄} L̄), trapezoid on the step grid.
    let lip: Vec<f64> = (0..=n).map(|i| (setup.lip_bar)(t0 + i as f64 * h)).collect();
    let mut weight = vec![0.0; n + 1];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        acc += 0.5 * h * (lip[i] + lip[i + 1]);
        weight[i] = acc.exp();
    }
    let mut per_step = vec![0.0; n];
    let mut dists = Vec::with_capacity(setup.n_paths);
    let (mut fa, mut fb, mut noise) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for (p, start) in x0.iter().take(setup.n_paths).enumerate() {
        let mut a = start.clone();
        let mut b = start.clone();
        let mut path = rng.substream(p as u64);
        for (step, slot) in per_step.iter_mut().enumerate() {
            let t = t0 + step as f64 * h;
            (setup.drift)(t, &a, &mut fa);
            (setup.drift_bar)(t, &a, &mut fb);
            *slot += math::dist(&fa, &fb);
            (setup.drift_bar)(t, &b, &mut fb);
            path.fill_gaussian(&mut noise);
            for k in 0..d {
                let dw = setup.r * h.sqrt() * noise[k];
                a[k] += fa[k] * h + dw;
                b[k] += fb[k] * h + dw;
            }
        }
        dists.push(math::dist(&a, &b));
    }
    let np = setup.n_paths as f64;
    let rhs: f64 = per_step.iter().zip(&weight).map(|(s, w)| h * w * s / np).sum();
    let (lhs, se) = mean_and_se(&dists);
    let mut report = CheckReport::new("stability_drift", case, lhs, rhs, rng.seed()).with("std_error", se);
    if let Some(gap) = setup.analytic_gap {
        // Euler error of a first-order linear gap ODE: at most h·(τ̄ − τ̲)/2 relative.
        let allowance = 3.0 * se + gap.abs() * h * (t1 - t0) / 2.0 + 1e-12;
        let off = (lhs - gap).abs();
        report = report.with("analytic_gap", gap).with("analytic_error", off).with("analytic_allowance", allowance);
        report.pass &= off <= allowance;
    }
    Ok(report)
}

/// `L̄_s` for the backward drift `ā_s(x) = x + (σ² + b_s²)(s*(T̄−s, x) + ε·bump(x))` with
/// `λ_max(∇bump) ≤ 1`: `1 + (σ² + b²)(Λ(T̄−s) − 1/σ² + ε)`, where `Λ(t)` is the
/// searched `sup_x λ_max(∇s*(t,x) + I/σ²)`.
pub fn perturbed_backward_lipschitz(sigma: f64, b: f64, lambda_excess: f64, eps: f64) -> f64 {
    let c = sigma * sigma + b * b;
    1.0 + c * (lambda_excess - 1.0 / (sigma * sigma) + eps)
}

/// `ε·tanh(x₁)·e₁`: a bounded perturbation whose Jacobian has `λ_max ≤ ε`.
pub fn tanh_bump(eps: f64) -> impl Fn(&[f64], &mut [f64]) + Sync {
    move |x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[0] = eps * x[0].tanh();
    }
}

/// Runs the oracle-versus-perturbed-oracle drift check on the backward process
/// of `target` over `[T̲, T̄]` with constant profile `b`. `Λ(t)` is searched on a
/// cube of half-width `radius` at `n_lambda` log-spaced times and interpolated
/// (taking the larger neighbour, so the profile stays an overestimate between nodes).
#[allow(clippy::too_many_arguments)]
pub fn check_perturbed_oracle(
    target: &MixtureTarget,
    spec: &ForwardSpec,
    t_low: f64,
    t_high: f64,
    b: f64,
    eps: f64,
    n_steps: usize,
    n_paths: usize,
    radius: f64,
    n_lambda: usize,
    rng: &Rng,
) -> Result<CheckReport> {
    let sigma = spec.sigma();
    let d = target.dim();
    let c = sigma * sigma + b * b;
    let grid = oracle::cube_grid(d, radius, if d <= 3 { 7 } else { 3 });
    let lt = oracle::log_grid(t_low, t_high, n_lambda.max(2));
    let lam = lt
        .iter()
        .map(|&t| oracle::sup_onesided_excess(target, spec, t, &grid, radius / 6.0))
        .collect::<Result<Vec<f64>>>()?;
    let lam_at = move |t: f64| -> f64 {
        let i = lt.partition_point(|&g| g <= t);
        let lo = lam[i.saturating_sub(1)];
        let hi = lam[i.min(lam.len() - 1)];
        lo.max(hi)
    };
    let bump = tanh_bump(eps);
    let drift = |s: f64, x: &[f64], out: &mut [f64]| {
        let marg = oracle::marginal_at(target, spec, t_high - s).expect("valid time");
        marg.mixture.grad_log_density_into(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi + c * *o;
        }
    };
    let drift_bar = |s: f64, x: &[f64], out: &mut [f64]| {
        drift(s, x, out);
        let mut p = vec![0.0; x.len()];
        bump(x, &mut p);
        for (o, pi) in out.iter_mut().zip(&p) {
            *o += c * pi;
        }
    };
    let lip_bar = |s: f64| perturbed_backward_lipschitz(sigma, b, lam_at(t_high - s), eps);
    let setup = DriftStability {
        drift: &drift,
        drift_bar: &drift_bar,
        lip_bar: &lip_bar,
        r: (2.0f64).sqrt() * b,
        tau: (0.0, t_high - t_low),
        n_steps,
        n_paths,
        analytic_gap: None,
    };
    let x0 = spec.marginal_sample(target, &rng.substream(0), t_high, n_paths)?;
    let report = check_stability_drift(&setup, &x0, &rng.substream(1), "perturbed_oracle")?;
    Ok(report.with("eps", eps).with("b", b))
}

/// Boxed zero drift, handy for the initial-law check.
pub fn zero_drift() -> Box<Drift<'static>> {
    Box::new(|_t: f64, _x: &[f64], out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0))
}
