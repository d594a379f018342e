//! Variance-preserving Ornstein–Uhlenbeck forward process
//! `dX_t = −X_t dt + √2 σ dB_t`, whose time-`t` marginal is the law of
//! `e^{−t} X_0 + σ_t Z` with `σ_t = σ √(1 − e^{−2t})`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Float;
use crate::rng::Rng;
use crate::targets::MixtureTarget;

/// Deterministic noise schedule `α_s ≥ 0` of a time-changed process
/// `dY = −α_t Y dt + √(2 α_t) σ dB`, equal in law to `X_{u_t}` with `u_t = ∫₀ᵗ α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSchedule {
    Constant(f64),
    /// Linear interpolation from `start` to `end` over `[0, ramp_time]`, then flat.
    LinearRamp { start: f64, end: f64, ramp_time: f64 },
    /// `α_s = intercept + slope·s`.
    Affine { intercept: f64, slope: f64 },
}

impl NoiseSchedule {
    pub fn rate(&self, s: f64) -> f64 {
        match *self {
            NoiseSchedule::Constant(c) => c,
            NoiseSchedule::LinearRamp { start, end, ramp_time } => {
                if s >= ramp_time {
                    end
                } else {
                    start + (end - start) * s / ramp_time
                }
            }
            NoiseSchedule::Affine { intercept, slope } => intercept + slope * s,
        }
    }

    fn is_unit(&self) -> bool {
        matches!(self, NoiseSchedule::Constant(c) if *c == 1.0)
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::Constant(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardSpec {
    sigma: f64,
    schedule: NoiseSchedule,
}

impl ForwardSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        Self::with_schedule(sigma, NoiseSchedule::default())
    }

    pub fn with_schedule(sigma: f64, schedule: NoiseSchedule) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParams("sigma must be positive and finite"));
        }
        Ok(ForwardSpec { sigma, schedule })
    }

    /// Process `dY = −λ α_t Y dt + √(2 α_t) σ dB`: equivalent to drift rate 1 with
    /// `σ² ↦ σ²/λ` and schedule `λ α`.
    pub fn from_drift_coefficient(sigma: f64, lambda: f64, schedule: NoiseSchedule) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParams("drift coefficient must be positive"));
        }
        let scaled = match schedule {
            NoiseSchedule::Constant(c) => NoiseSchedule::Constant(lambda * c),
            NoiseSchedule::LinearRamp { start, end, ramp_time } => {
                NoiseSchedule::LinearRamp { start: lambda * start, end: lambda * end, ramp_time }
            }
            NoiseSchedule::Affine { intercept, slope } => {
                NoiseSchedule::Affine { intercept: lambda * intercept, slope: lambda * slope }
            }
        };
        Self::with_schedule(sigma / lambda.sqrt(), scaled)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    /// Checks `K⁻¹ ≤ σ ≤ K`.
    pub fn check_sigma_bound(&self, k: f64) -> Result<()> {
        if self.sigma < 1.0 / k || self.sigma > k {
            return Err(Error::InvalidParams("sigma outside [1/K, K]"));
        }
        Ok(())
    }

    /// `σ_t = σ √(1 − e^{−2t})`, via `expm1` so small `t` keeps full precision.
    pub fn sigma_t(&self, t: f64) -> f64 {
        sigma_t(self.sigma, t)
    }

    /// Time on the unit-rate clock corresponding to schedule time `t`.
    pub fn marginal_time(&self, t: f64) -> Result<f64> {
        if self.schedule.is_unit() {
            Ok(t)
        } else {
            time_change(&self.schedule, t)
        }
    }

    /// `n` draws of `e^{−u} X₀ + σ_u Z` with `u = marginal_time(t)`. `X₀` and `Z`
    /// come from independent substreams of `rng`.
    pub fn marginal_sample(&self, target: &MixtureTarget, rng: &Rng, t: f64, n: usize) -> Result<Vec<Vec<f64>>> {
        if !(t >= 0.0) {
            return Err(Error::InvalidParams("time must be nonnegative"));
        }
        let u = self.marginal_time(t)?;
        let decay = (-u).exp();
        let st = self.sigma_t(u);
        let mut data_rng = rng.substream(0);
        let mut noise_rng = rng.substream(1);
        let d = target.dim();
        let mut out = target.sample(&mut data_rng, n);
        let mut z = vec![0.0; d];
        for x in &mut out {
            noise_rng.fill_gaussian(&mut z);
            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi = decay * *xi + st * zi;
            }
        }
        Ok(out)
    }
}

pub fn sigma_t(sigma: f64, t: f64) -> f64 {
    sigma * (-(-2.0 * t).exp_m1()).sqrt()
}

/// `u_t = ∫₀ᵗ α_s ds` by adaptive Simpson quadrature (relative tolerance 1e-10).
pub fn time_change(schedule: &NoiseSchedule, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParams("time must be nonnegative"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let f = |s: f64| -> Result<f64> {
        let a = schedule.rate(s);
        if a < 0.0 || !a.is_finite() {
            Err(Error::ScheduleNegative { s })
        } else {
            Ok(a)
        }
    };
    let fa = f(0.0)?;
    let fm = f(0.5 * t)?;
    let fb = f(t)?;
    let whole = simpson(0.0, t, fa, fm, fb);
    let tol = 1e-12 * whole.abs().max(1e-300);
    adaptive_simpson(&f, 0.0, t, fa, fm, fb, whole, tol, 50)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson<F: Fn(f64) -> Result<f64>>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    Ok(adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn sigma_t_reference_values() {
        let two = ForwardSpec::new(2.0).unwrap();
        assert_eq!(two.sigma_t(0.0), 0.0);
        let one = ForwardSpec::new(1.0).unwrap();
        assert!((one.sigma_t(50.0) - 1.0).abs() < 1e-12);
        let half = one.sigma_t(2f64.ln() / 2.0);
        assert!((half - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn sigma_t_small_time_precision() {
        // σ_t² / (2t) → σ² as t → 0; naive 1 − e^{−2t} loses digits here.
        let spec = ForwardSpec::new(1.0).unwrap();
        let t = 1e-12;
        let ratio = spec.sigma_t(t).powi(2) / (2.0 * t);
        assert!((ratio - 1.0).abs() < 1e-11);
    }

    #[test]
    fn sigma_t_monotone_and_bounded() {
        let spec = ForwardSpec::new(1.7).unwrap();
        let mut prev = 0.0;
        for i in 0..2000 {
            let s = spec.sigma_t(i as f64 * 0.01);
            assert!(s >= prev && s <= 1.7);
            prev = s;
        }
    }

    #[test]
    fn time_change_cases() {
        assert_eq!(time_change(&NoiseSchedule::Constant(1.0), 3.0).unwrap(), 3.0);
        let two = time_change(&NoiseSchedule::Constant(2.0), 1.25).unwrap();
        assert!((two - 2.5).abs() < 1e-12);
        let lin = time_change(&NoiseSchedule::Affine { intercept: 0.0, slope: 1.0 }, 2.0).unwrap();
        assert!((lin - 2.0).abs() <= 1e-10 * 2.0);
        let ramp = NoiseSchedule::LinearRamp { start: 0.5, end: 2.0, ramp_time: 1.0 };
        // ∫₀¹ (0.5 + 1.5 s) ds + 2·(3 − 1) = 1.25 + 4
        assert!((time_change(&ramp, 3.0).unwrap() - 5.25).abs() < 1e-10);
    }

    #[test]
    fn time_change_rejects_negative_rate() {
        let bad = NoiseSchedule::Affine { intercept: 1.0, slope: -1.0 };
        assert!(matches!(time_change(&bad, 4.0), Err(Error::ScheduleNegative { .. })));
    }

    #[test]
    fn drift_coefficient_substitution() {
        let spec = ForwardSpec::from_drift_coefficient(2.0, 4.0, NoiseSchedule::Constant(1.0)).unwrap();
        assert!((spec.sigma() - 1.0).abs() < 1e-15);
        assert_eq!(spec.marginal_time(0.5).unwrap(), 2.0);
    }

    #[test]
    fn marginal_sample_at_zero_is_data() {
        let target = MixtureTarget::benchmark(2);
        let spec = ForwardSpec::new(1.0).unwrap();
        let rng = Rng::new(4, 0);
        let xs = spec.marginal_sample(&target, &rng, 0.0, 100).unwrap();
        let direct = target.sample(&mut rng.substream(0), 100);
        assert_eq!(xs, direct);
    }

    fn moments(xs: &[Vec<f64>]) -> (Vec<f64>, Matrix) {
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mut m = vec![0.0; d];
        for x in xs {
            for i in 0..d {
                m[i] += x[i] / n;
            }
        }
        let mut c = Matrix::zeros(d, d);
        for x in xs {
            for i in 0..d {
                for j in 0..d {
                    c[(i, j)] += (x[i] - m[i]) * (x[j] - m[j]) / (n - 1.0);
                }
            }
        }
        (m, c)
    }

    #[test]
    fn stationary_target_keeps_covariance() {
        let sigma = 1.3;
        let target = MixtureTarget::stationary(2, sigma).unwrap();
        let spec = ForwardSpec::new(sigma).unwrap();
        let xs = spec.marginal_sample(&target, &Rng::new(10, 0), 0.7, 100_000).unwrap();
        let (_, c) = moments(&xs);
        let s2 = sigma * sigma;
        assert!((c[(0, 0)] - s2).abs() < 0.03 * s2 + 0.0);
        assert!((c[(1, 1)] - s2).abs() < 0.03 * s2);
        assert!(c[(0, 1)].abs() < 0.03);
    }

    #[test]
    fn gaussian_target_affine_law_at_t1() {
        let mu = vec![2.0, -1.0];
        let cov = Matrix::from_rows(&[vec![0.5, 0.2], vec![0.2, 0.3]]);
        let target = MixtureTarget::gaussian(mu.clone(), cov.clone()).unwrap();
        let spec = ForwardSpec::new(1.0).unwrap();
        let n = 100_000;
        let xs = spec.marginal_sample(&target, &Rng::new(11, 0), 1.0, n).unwrap();
        let (m, c) = moments(&xs);
        let e1 = (-1.0f64).exp();
        let want_cov = cov.scaled(e1 * e1).add_diag(spec.sigma_t(1.0).powi(2));
        for i in 0..2 {
            let se = (want_cov[(i, i)] / n as f64).sqrt();
            assert!((m[i] - e1 * mu[i]).abs() < 4.0 * se);
            for j in 0..2 {
                // Var of a sample covariance entry ≈ (Σ_ii Σ_jj + Σ_ij²)/n.
                let se_c = ((want_cov[(i, i)] * want_cov[(j, j)] + want_cov[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((c[(i, j)] - want_cov[(i, j)]).abs() < 4.0 * se_c);
            }
        }
    }

    #[test]
    fn scheduled_sampling_matches_time_changed_clock() {
        let target = MixtureTarget::benchmark(2);
        let ramp = ForwardSpec::with_schedule(1.0, NoiseSchedule::Affine { intercept: 0.0, slope: 1.0 }).unwrap();
        let unit = ForwardSpec::new(1.0).unwrap();
        let n = 100_000;
        let a = ramp.marginal_sample(&target, &Rng::new(12, 0), 1.0, n).unwrap();
        let b = unit.marginal_sample(&target, &Rng::new(13, 0), 0.5, n).unwrap();
        let (ma, ca) = moments(&a);
        let (mb, cb) = moments(&b);
        for i in 0..2 {
            assert!((ma[i] - mb[i]).abs() < 5.0 * (2.0 * cb[(i, i)] / n as f64).sqrt());
            assert!((ca[(i, i)] - cb[(i, i)]).abs() < 5.0 * cb[(i, i)] * (4.0 / n as f64).sqrt() * 2.0);
        }
    }
}
