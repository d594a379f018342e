//! Frozen check suites behind `verify` and `oracle-check`.

use rayon::prelude::*;
use scoregen_core::forward::ForwardSpec;
use scoregen_core::oracle::{self, OracleScore, PropertyBReport, PropertyCdReport, PropertyReport};
use scoregen_core::rng::Rng;
use scoregen_core::sampler::{DiffusionProfile, Integrator, SampleRun, StepGrid, Trajectory};
use scoregen_core::scorenet::{FnScore, ScoreField};
use scoregen_core::trainer;
use scoregen_core::verify::{self, CheckReport, Drift, DriftStability, GaussianPair, InitialStability, ReversalConfig};
use scoregen_core::{Matrix, MixtureTarget, Result as CoreResult, ScoreModel, TimeSchedule};
use serde::Serialize;

use crate::error::{Result, Stage};
use crate::parallel;

pub const VERIFY_STREAM: u64 = 0x7665_7269;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Denoising,
    Reversal,
    Stability,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(Suite::All),
            "denoising" => Ok(Suite::Denoising),
            "reversal" => Ok(Suite::Reversal),
            "stability" => Ok(Suite::Stability),
            other => Err(format!("unknown suite `{other}` (all, denoising, reversal, stability)")),
        }
    }
}

/// Monte Carlo sizes for the suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale {
    pub denoising_draws: usize,
    pub moment_paths: usize,
    pub moment_steps: usize,
    pub reversal_paths: usize,
    pub reversal_steps: usize,
    pub stability_paths: usize,
}

impl Scale {
    pub fn full() -> Self {
        Scale {
            denoising_draws: 100_000,
            moment_paths: 100_000,
            moment_steps: 2048,
            reversal_paths: 20_000,
            reversal_steps: 1000,
            stability_paths: 2000,
        }
    }

    pub fn quick() -> Self {
        Scale {
            denoising_draws: 10_000,
            moment_paths: 10_000,
            moment_steps: 512,
            reversal_paths: 4000,
            reversal_steps: 400,
            stability_paths: 500,
        }
    }
}

fn unit_spec() -> ForwardSpec {
    ForwardSpec::new(1.0).expect("unit sigma is valid")
}

/// `N((1, −½), [[1.5, 0.3], [0.3, 0.8]])`.
pub fn single_gaussian() -> MixtureTarget {
    let cov = Matrix::from_rows(&[vec![1.5, 0.3], vec![0.3, 0.8]]);
    MixtureTarget::gaussian(vec![1.0, -0.5], cov).expect("valid covariance")
}

pub fn suite_targets() -> Vec<(&'static str, MixtureTarget)> {
    vec![
        ("stationary", MixtureTarget::stationary(2, 1.0).expect("valid")),
        ("single_gaussian", single_gaussian()),
        ("benchmark", MixtureTarget::benchmark(3)),
    ]
}

pub const DENOISING_TIMES: [f64; 3] = [0.05, 0.5, 2.0];

pub fn run(suite: Suite, scale: &Scale, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::All | Suite::Denoising) {
        out.extend(denoising(scale, seed)?);
    }
    if matches!(suite, Suite::All | Suite::Reversal) {
        out.extend(reversal(scale, seed)?);
    }
    if matches!(suite, Suite::All | Suite::Stability) {
        out.extend(stability(scale, seed)?);
    }
    Ok(out)
}

/// Oracle against the zero map, 3 targets × 3 times.
pub fn denoising(scale: &Scale, seed: u64) -> Result<Vec<CheckReport>> {
    let spec = unit_spec();
    let base = Rng::new(seed, VERIFY_STREAM).substream(0);
    let cases: Vec<(usize, usize)> = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).collect();
    let targets = suite_targets();
    cases
        .par_iter()
        .map(|&(ti, ki)| {
            let (name, target) = &targets[ti];
            let t = DENOISING_TIMES[ki];
            let oracle = OracleScore::new(target.clone(), spec);
            let zero = FnScore::new(target.dim(), |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(0.0));
            let rng = base.substream_path(&[ti as u64, ki as u64]);
            let case = format!("{name}/t={t}");
            verify::check_denoising_trick(target, &spec, t, &oracle, &zero, scale.denoising_draws, &rng, &case)
                .stage("verify")
        })
        .collect()
}

fn parallel_integrator<'a>(
    score: &'a (dyn ScoreField + Sync),
) -> impl Fn(&SampleRun, usize, &Rng, &[usize]) -> CoreResult<Trajectory> + 'a {
    move |run, n, rng, steps| parallel::integrate_with_snapshots(score, run, n, rng, steps)
}

/// Moments of oracle-driven backward ensembles at horizon fractions against the
/// analytic forward marginal of a single Gaussian.
pub fn moment_reversal(
    profile: DiffusionProfile,
    integrator: Integrator,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<CheckReport>> {
    let spec = unit_spec();
    let target = single_gaussian();
    let oracle = OracleScore::new(target.clone(), spec);
    let run = SampleRun::new(spec, 0.01, 8.0, profile, n_steps).stage("verify")?.with_integrator(integrator);
    let fractions = [0.25, 0.5, 1.0];
    let steps = verify::snapshot_steps(&run, &fractions);
    let rng = Rng::new(seed, VERIFY_STREAM).substream(1);
    let (_, snaps) = parallel::integrate_with_snapshots(&oracle, &run, n_paths, &rng, &steps).stage("verify")?;
    let times = run.step_times();
    let label = run.profile.label();
    let mut out = Vec::new();
    for (step, snap) in steps.iter().zip(&snaps) {
        let t_fwd = (run.t_high - times[*step]).max(run.t_low);
        let marg = oracle::marginal_at(&target, &spec, t_fwd).stage("verify")?;
        let comp = &marg.mixture.components()[0];
        let case = format!("single_gaussian/{label}/t={t_fwd:.4}");
        out.extend(verify::check_moments(snap, &comp.mean, &comp.cov, seed, &case).stage("verify")?);
    }
    Ok(out)
}

pub fn reversal(scale: &Scale, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = moment_reversal(DiffusionProfile::Ddpm, Integrator::EulerMaruyama, scale.moment_paths, scale.moment_steps, seed)?;
    let spec = unit_spec();
    let cfg = ReversalConfig::default();
    let rng = Rng::new(seed, VERIFY_STREAM).substream(2);
    for (i, (name, target)) in suite_targets().into_iter().enumerate() {
        let oracle = OracleScore::new(target.clone(), spec);
        let integrate = parallel_integrator(&oracle);
        let ddpm = SampleRun::new(spec, 0.01, 8.0, DiffusionProfile::Ddpm, scale.reversal_steps)
            .stage("verify")?
            .with_grid(StepGrid::Geometric);
        let ode = SampleRun { profile: DiffusionProfile::Ode, ..ddpm.clone() };
        out.extend(
            verify::check_marginal_reversal_with(
                &integrate,
                &target,
                &ddpm,
                scale.reversal_paths,
                &cfg,
                &rng.substream_path(&[i as u64, 0]),
                &format!("{name}/ddpm"),
            )
            .stage("verify")?,
        );
        out.push(
            verify::check_profile_agreement_with(
                &integrate,
                &target,
                &ode,
                &ddpm,
                scale.reversal_paths,
                &cfg,
                &rng.substream_path(&[i as u64, 1]),
                &format!("{name}/ode_vs_ddpm"),
            )
            .stage("verify")?,
        );
    }
    Ok(out)
}

fn tanh_drift(_t: f64, x: &[f64], out: &mut [f64]) {
    for (o, xi) in out.iter_mut().zip(x) {
        *o = -xi.tanh();
    }
}

/// Shifted-mean pairs in `d = 3` under the zero drift, for each `δ`.
pub fn mean_shift_cases(deltas: &[f64], n_paths: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let zero = verify::zero_drift();
    deltas
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            let setup = InitialStability {
                pair: GaussianPair::MeanShift { d: 3, delta },
                drift: &*zero,
                v_bound: 0.0,
                r: 1.0,
                tau: (0.0, 1.0),
                n_steps: 20,
                n_paths,
            };
            let rng = Rng::new(seed, VERIFY_STREAM).substream_path(&[3, i as u64]);
            verify::check_stability_initial(&setup, &rng, &format!("mean_shift/zero_drift/delta={delta}")).stage("verify")
        })
        .collect()
}

pub fn stability(scale: &Scale, seed: u64) -> Result<Vec<CheckReport>> {
    let n = scale.stability_paths;
    let mut out = mean_shift_cases(&[0.0, 0.1, 0.2, 0.4], n, seed)?;
    let bounded: &Drift<'_> = &tanh_drift;
    let initial_cases = [
        ("mean_shift/tanh_drift/delta=0.3", GaussianPair::MeanShift { d: 3, delta: 0.3 }, 3f64.sqrt()),
        ("variance_scale/tanh_drift/1.0_vs_1.5", GaussianPair::VarianceScale { s1: 1.0, s2: 1.5 }, 1.0),
        ("variance_scale/tanh_drift/1.0_vs_1.1", GaussianPair::VarianceScale { s1: 1.0, s2: 1.1 }, 1.0),
    ];
    for (i, (case, pair, v)) in initial_cases.into_iter().enumerate() {
        let setup = InitialStability { pair, drift: bounded, v_bound: v, r: 1.0, tau: (0.0, 1.0), n_steps: 50, n_paths: n };
        let rng = Rng::new(seed, VERIFY_STREAM).substream_path(&[4, i as u64]);
        out.push(verify::check_stability_initial(&setup, &rng, case).stage("verify")?);
    }

    let eps = 0.3;
    let horizon = 1.5;
    let linear = |_t: f64, x: &[f64], o: &mut [f64]| {
        for (oi, xi) in o.iter_mut().zip(x) {
            *oi = -xi;
        }
    };
    let shifted = move |t: f64, x: &[f64], o: &mut [f64]| {
        linear(t, x, o);
        o[0] += eps;
    };
    let zero_lip = |_t: f64| 0.0;
    let one_lip = |_t: f64| 1.0;
    let x0 = MixtureTarget::benchmark(2).sample(&mut Rng::new(seed, VERIFY_STREAM).substream(5), n);
    let drift_cases: [(&str, DriftStability<'_>); 2] = [
        (
            "equal_drifts",
            DriftStability {
                drift: &tanh_drift,
                drift_bar: &tanh_drift,
                lip_bar: &one_lip,
                r: 1.0,
                tau: (0.0, horizon),
                n_steps: 300,
                n_paths: n,
                analytic_gap: None,
            },
        ),
        (
            "linear/eps=0.3",
            DriftStability {
                drift: &linear,
                drift_bar: &shifted,
                lip_bar: &zero_lip,
                r: 1.0,
                tau: (0.0, horizon),
                n_steps: 300,
                n_paths: n,
                analytic_gap: Some(eps * (1.0 - (-horizon).exp())),
            },
        ),
    ];
    for (i, (case, setup)) in drift_cases.iter().enumerate() {
        let rng = Rng::new(seed, VERIFY_STREAM).substream_path(&[6, i as u64]);
        out.push(verify::check_stability_drift(setup, &x0, &rng, case).stage("verify")?);
    }
    let rng = Rng::new(seed, VERIFY_STREAM).substream(7);
    out.push(
        verify::check_perturbed_oracle(&MixtureTarget::benchmark(2), &unit_spec(), 0.05, 4.0, 1.0, 0.2, 400, n.min(1000), 3.0, 12, &rng)
            .stage("verify")?,
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdSummary {
    pub cases: usize,
    pub max_score_rel_error: f64,
    pub max_jacobian_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Random mixture with 1–3 components in dimension 1–3.
pub fn random_target(rng: &mut Rng) -> MixtureTarget {
    let d = 1 + rng.below(3);
    let k = 1 + rng.below(3);
    let raw: Vec<f64> = (0..k).map(|_| 0.2 + rng.next_f64()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let means = (0..k).map(|_| (0..d).map(|_| 4.0 * rng.next_f64() - 2.0).collect()).collect();
    let covs = (0..k)
        .map(|_| {
            let mut l = Matrix::zeros(d, d);
            for i in 0..d {
                for j in 0..=i {
                    l[(i, j)] = 0.5 * rng.gaussian();
                }
            }
            l.matmul(&l.transpose()).add_diag(0.05)
        })
        .collect();
    MixtureTarget::new(&weights, means, covs).expect("normalized weights and SPD covariances")
}

/// Closed-form scores and Jacobians against central differences at random
/// `(target, t ∈ [1e-3, 30], x)`, `x` drawn from the forward marginal.
pub fn finite_difference_suite(cases: usize, seed: u64) -> Result<FdSummary> {
    let spec = unit_spec();
    let base = Rng::new(seed, VERIFY_STREAM).substream(8);
    let errs = (0..cases)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.substream(i as u64);
            let target = random_target(&mut rng);
            let t = (1e-3f64.ln() + rng.next_f64() * (30f64.ln() - 1e-3f64.ln())).exp();
            let x = spec.marginal_sample(&target, &rng.substream(1), t, 1)?.remove(0);
            oracle::finite_difference_errors(&target, &spec, t, &x)
        })
        .collect::<CoreResult<Vec<_>>>()
        .stage("oracle")?;
    let max_s = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let max_j = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let tolerance = 1e-5;
    Ok(FdSummary { cases, max_score_rel_error: max_s, max_jacobian_error: max_j, tolerance, pass: max_s <= tolerance && max_j <= tolerance })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarySummary {
    pub max_score_deviation: f64,
    pub zero_model_fisher: f64,
    pub max_onesided_excess: f64,
    pub pass: bool,
}

/// `p* = N(0, σ²I)`: exact score, zero Fisher loss of the zero model, zero excess.
pub fn stationary_suite(seed: u64) -> Result<StationarySummary> {
    let sigma = 1.3;
    let d = 3;
    let spec = ForwardSpec::new(sigma).stage("oracle")?;
    let target = MixtureTarget::stationary(d, sigma).stage("oracle")?;
    let times = oracle::log_grid(1e-3, 30.0, 16);
    let points = oracle::cube_grid(d, 4.0, 5);
    let mut dev: f64 = 0.0;
    let mut excess: f64 = f64::NEG_INFINITY;
    for &t in &times {
        dev = dev.max(oracle::sup_stationary_deviation(&target, &spec, t, &points).stage("oracle")?);
        let marg = oracle::marginal_at(&target, &spec, t).stage("oracle")?;
        for x in &points {
            excess = excess.max(oracle::onesided_excess(&marg, sigma, x));
        }
    }
    let mut p = scoregen_core::schedule::ScheduleParams::new(1024, 1.0, d);
    p.sigma = sigma;
    let schedule = TimeSchedule::build(&p).stage("oracle")?;
    let model = ScoreModel::zeros(schedule.clone(), sigma, d);
    let rng = Rng::new(seed, VERIFY_STREAM).substream(9);
    let parts = parallel::fisher_by_interval(&model, &target, &spec, &schedule, 2, 256, &rng).stage("oracle")?;
    let fisher = trainer::total_fisher(&parts).value;
    let tol = 1e-12;
    Ok(StationarySummary {
        max_score_deviation: dev,
        zero_model_fisher: fisher,
        max_onesided_excess: excess,
        pass: dev <= tol && fisher <= tol * tol && excess.abs() <= tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeSummary {
    /// Constant fitted on the coarse grid, checked on the refined one.
    pub fit: PropertyBReport,
    pub refined: PropertyBReport,
    pub sup_at_t10: f64,
    pub integral_relative_change: f64,
    pub pass: bool,
}

/// Property B on the benchmark over `[t_low, t_high]`: fit on `n_times`
/// log-spaced times, then check domination and the integral on `2·n_times − 1`.
pub fn envelope_suite(t_low: f64, t_high: f64, n_times: usize) -> Result<EnvelopeSummary> {
    let spec = unit_spec();
    let target = MixtureTarget::benchmark(3);
    let points = oracle::cube_grid(3, 3.0, 7);
    let coarse = oracle::log_grid(t_low, t_high, n_times);
    let fine = oracle::log_grid(t_low, t_high, 2 * n_times - 1);
    let sup_at = |ts: &[f64]| {
        ts.par_iter().map(|&t| oracle::sup_onesided_excess(&target, &spec, t, &points, 0.5)).collect::<CoreResult<Vec<f64>>>()
    };
    let build = |ts: &[f64], sups: Vec<f64>, constant: Option<f64>| -> PropertyBReport {
        let fitted = ts.iter().zip(&sups).map(|(&t, &v)| v / oracle::property_b_envelope(t, 1.0)).fold(0.0, f64::max);
        let c = constant.unwrap_or(fitted);
        let dominated = ts.iter().zip(&sups).all(|(&t, &v)| v <= c * oracle::property_b_envelope(t, 1.0));
        let integral = oracle::trapezoid(ts, &sups);
        PropertyBReport { times: ts.to_vec(), sup_excess: sups, fitted_constant: fitted, constant: c, dominated, integral, pass: dominated && integral.is_finite() }
    };
    let fit = build(&coarse, sup_at(&coarse).stage("oracle")?, None);
    let refined = build(&fine, sup_at(&fine).stage("oracle")?, Some(fit.fitted_constant));
    let sup_at_t10 = oracle::sup_onesided_excess(&target, &spec, 10.0, &points, 0.5).stage("oracle")?;
    let change = (refined.integral - fit.integral).abs() / fit.integral.abs();
    Ok(EnvelopeSummary {
        pass: refined.pass && sup_at_t10 <= 1e-6 && change <= 0.05,
        fit,
        refined,
        sup_at_t10,
        integral_relative_change: change,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub finite_differences: FdSummary,
    pub stationary: StationarySummary,
    pub growth: PropertyReport,
    pub envelope: EnvelopeSummary,
    pub regularity: PropertyCdReport,
    pub pass: bool,
}

/// Frozen constants for the benchmark's growth and regularity checks.
pub const GROWTH_CONSTANT: f64 = 1.0;
pub const HOLDER_CONSTANT: f64 = 0.5;
pub const GRADIENT_CONSTANT: f64 = 2.0;

pub fn oracle_check(seed: u64, fd_cases: usize) -> Result<OracleCheck> {
    let spec = unit_spec();
    let target = MixtureTarget::benchmark(3);
    let finite_differences = finite_difference_suite(fd_cases, seed)?;
    let stationary = stationary_suite(seed)?;
    let times = oracle::log_grid(1e-3, 30.0, 24);
    let points = oracle::cube_grid(3, 4.0, 7);
    let growth = oracle::check_property_a(&target, &spec, &times, &points, GROWTH_CONSTANT).stage("oracle")?;
    let envelope = envelope_suite(1e-3, 10.5, 33)?;
    let pairs: Vec<(f64, f64)> = oracle::log_grid(0.01, 5.0, 12).into_iter().map(|t| (t, 1.05 * t)).collect();
    let regularity =
        oracle::check_properties_cd(&target, &spec, &pairs, &oracle::cube_grid(3, 3.0, 5), HOLDER_CONSTANT, GRADIENT_CONSTANT)
            .stage("oracle")?;
    let pass = finite_differences.pass && stationary.pass && growth.pass && envelope.pass && regularity.pass;
    Ok(OracleCheck { finite_differences, stationary, growth, envelope, regularity, pass })
}
