//! Closed-form forward marginals, scores and score Jacobians for mixture
//! targets, and grid checks of the score regularity properties.
//!
//! Under the OU forward process each component `N(μ_l, Σ_l)` is pushed to
//! `N(e^{−t}μ_l, e^{−2t}Σ_l + σ_t² I)`, so `p_t` stays a mixture with the same
//! weights and every quantity is available exactly.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::forward::ForwardSpec;
use crate::linalg::{self, Matrix};
use crate::math::{self, Float};
use crate::rng::Rng;
use crate::scorenet::{ScoreField, ScoreSlice};
use crate::targets::{Component, GaussianMixture, MixtureTarget};

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMixture {
    pub t: f64,
    pub mixture: GaussianMixture,
}

impl MarginalMixture {
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        self.mixture.grad_log_density(x)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.mixture.log_density(x)
    }

    pub fn score_jacobian(&self, x: &[f64]) -> Matrix {
        self.mixture.hessian_log_density(x)
    }
}

impl ScoreSlice for MarginalMixture {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.mixture.grad_log_density_into(x, out);
    }
}

/// Law of `X_t` for `X_0` drawn from `target`.
pub fn marginal_at(target: &MixtureTarget, spec: &ForwardSpec, t: f64) -> Result<MarginalMixture> {
    let u = spec.marginal_time(t)?;
    let decay = (-u).exp();
    let noise_var = spec.sigma_t(u).powi(2);
    let components = target
        .mixture()
        .components()
        .iter()
        .map(|c| {
            let mean = c.mean.iter().map(|m| decay * m).collect();
            let cov = c.cov.scaled(decay * decay).add_diag(noise_var);
            Component::new(c.weight, mean, cov)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MarginalMixture { t, mixture: GaussianMixture::from_components(components)? })
}

pub fn score(target: &MixtureTarget, spec: &ForwardSpec, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    Ok(marginal_at(target, spec, t)?.score(x))
}

/// `∇ s*(t, x)`, symmetric by construction.
pub fn score_jacobian(target: &MixtureTarget, spec: &ForwardSpec, t: f64, x: &[f64]) -> Result<Matrix> {
    Ok(marginal_at(target, spec, t)?.score_jacobian(x))
}

/// Central-difference consistency of the closed forms at `(t, x)`: returns
/// `(‖s − ∇̂ log p_t‖ / max(‖s‖, 1), max_ij |J − ∇̂ s|_ij / max(|J_ij|, 1))`, with
/// step `h` scaled to the smallest marginal component standard deviation.
pub fn finite_difference_errors(target: &MixtureTarget, spec: &ForwardSpec, t: f64, x: &[f64]) -> Result<(f64, f64)> {
    let marg = marginal_at(target, spec, t)?;
    let d = x.len();
    let s_min = marg
        .mixture
        .components()
        .iter()
        .flat_map(|c| (0..d).map(move |i| c.chol()[(i, i)]))
        .fold(f64::INFINITY, f64::min);
    let h = 1e-4 * s_min;
    let s = marg.score(x);
    let jac = marg.score_jacobian(x);
    let mut xp = x.to_vec();
    let mut fd = vec![0.0; d];
    let mut jac_err: f64 = 0.0;
    for i in 0..d {
        xp[i] = x[i] + h;
        let (lp, sp) = (marg.log_density(&xp), marg.score(&xp));
        xp[i] = x[i] - h;
        let (lm, sm) = (marg.log_density(&xp), marg.score(&xp));
        xp[i] = x[i];
        fd[i] = (lp - lm) / (2.0 * h);
        for r in 0..d {
            let col = (sp[r] - sm[r]) / (2.0 * h);
            jac_err = jac_err.max((jac[(r, i)] - col).abs() / jac[(r, i)].abs().max(1.0));
        }
    }
    Ok((math::dist(&s, &fd) / math::norm(&s).max(1.0), jac_err))
}

/// The exact score `s*` of a mixture target as a [`ScoreField`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleScore {
    pub target: MixtureTarget,
    pub spec: ForwardSpec,
}

impl OracleScore {
    pub fn new(target: MixtureTarget, spec: ForwardSpec) -> Self {
        OracleScore { target, spec }
    }
}

impl ScoreField for OracleScore {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn score_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        marginal_at(&self.target, &self.spec, t)?.mixture.grad_log_density_into(x, out);
        Ok(())
    }

    fn at_time(&self, t: f64) -> Result<Box<dyn ScoreSlice + '_>> {
        Ok(Box::new(marginal_at(&self.target, &self.spec, t)?))
    }
}

/// Points of the cube `[−r, r]^d` on a regular `per_axis^d` lattice.
pub fn cube_grid(d: usize, radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = per_axis.max(2);
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    -radius + 2.0 * radius * i as f64 / (per_axis - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// `n` times log-spaced on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i + 1 == n {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Empirical `(1 − eps)`-quantile of `‖X_t‖`, used as the bulk-region radius.
pub fn bulk_radius(target: &MixtureTarget, spec: &ForwardSpec, t: f64, eps: f64, n: usize, rng: &Rng) -> Result<f64> {
    let xs = spec.marginal_sample(target, rng, t, n)?;
    let mut norms: Vec<f64> = xs.iter().map(|x| math::norm(x)).collect();
    norms.sort_by(f64::total_cmp);
    let idx = (((1.0 - eps) * n as f64).ceil() as usize).clamp(1, n) - 1;
    Ok(norms[idx])
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PropertyReport {
    pub property: &'static str,
    pub grid: alloc::string::String,
    pub max_ratio: f64,
    pub fitted_constant: f64,
    pub pass: bool,
}

/// Growth bound `‖s*(t,x)‖ ≤ C(1 + 1/t)(1 + ‖x‖)`: max ratio over the grid.
pub fn check_property_a(
    target: &MixtureTarget,
    spec: &ForwardSpec,
    times: &[f64],
    points: &[Vec<f64>],
    c: f64,
) -> Result<PropertyReport> {
    let mut worst: f64 = 0.0;
    for &t in times {
        let worst_t = property_a_ratio_at(target, spec, t, points)?;
        worst = worst.max(worst_t);
    }
    Ok(PropertyReport {
        property: "A",
        grid: grid_label(times, points),
        max_ratio: worst,
        fitted_constant: worst,
        pass: worst <= c,
    })
}

/// `max_x ‖s*(t,x)‖ / ((1 + 1/t)(1 + ‖x‖))` at a single time.
pub fn property_a_ratio_at(target: &MixtureTarget, spec: &ForwardSpec, t: f64, points: &[Vec<f64>]) -> Result<f64> {
    let marg = marginal_at(target, spec, t)?;
    let shape = 1.0 + 1.0 / t;
    Ok(points
        .iter()
        .map(|x| math::norm(&marg.score(x)) / (shape * (1.0 + math::norm(x))))
        .fold(0.0, f64::max))
}

fn grid_label(times: &[f64], points: &[Vec<f64>]) -> alloc::string::String {
    alloc::format!(
        "t in [{:.3e}, {:.3e}] x {} times; {} points",
        times.first().copied().unwrap_or(0.0),
        times.last().copied().unwrap_or(0.0),
        times.len(),
        points.len()
    )
}

/// `λ_max(∇s*(t,x) + I/σ²)`.
pub fn onesided_excess(marg: &MarginalMixture, sigma: f64, x: &[f64]) -> f64 {
    let m = marg.score_jacobian(x).add_diag(1.0 / (sigma * sigma));
    let tol = 1e-13 * (1.0 + m.inf_norm());
    match linalg::lambda_max_symmetric(&m, tol) {
        Ok(l) => l,
        Err(crate::Error::NoConvergence { estimate }) => estimate,
        Err(_) => f64::NAN,
    }
}

/// Grid maximum of `f`, then 20 steps of coordinate hill climbing from the best point.
pub fn sup_with_ascent<F: Fn(&[f64]) -> f64>(f: F, points: &[Vec<f64>], step0: f64) -> (f64, Vec<f64>) {
    let mut best_x = points[0].clone();
    let mut best = f64::NEG_INFINITY;
    for x in points {
        let v = f(x);
        if v > best {
            best = v;
            best_x = x.clone();
        }
    }
    let mut step = step0;
    let d = best_x.len();
    for _ in 0..20 {
        let mut improved = false;
        for i in 0..d {
            for sgn in [1.0, -1.0] {
                let mut cand = best_x.clone();
                cand[i] += sgn * step;
                let v = f(&cand);
                if v > best {
                    best = v;
                    best_x = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, best_x)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PropertyBReport {
    pub times: Vec<f64>,
    /// Estimated `sup_x λ_max(∇s*(t,x) + I/σ²)` per time.
    pub sup_excess: Vec<f64>,
    /// `max_t sup_excess / envelope_shape`.
    pub fitted_constant: f64,
    /// Constant the curve was checked against (the fitted one if none was supplied).
    pub constant: f64,
    pub dominated: bool,
    /// Trapezoid estimate of `∫ sup_x λ_max dt` over the time grid.
    pub integral: f64,
    pub pass: bool,
}

/// `e^{−2t}(1 + t^{−(1 − (β∧1)/2)})`.
pub fn property_b_envelope(t: f64, beta: f64) -> f64 {
    (-2.0 * t).exp() * (1.0 + t.powf(-(1.0 - beta.min(1.0) / 2.0)))
}

pub fn sup_onesided_excess(target: &MixtureTarget, spec: &ForwardSpec, t: f64, points: &[Vec<f64>], step0: f64) -> Result<f64> {
    let marg = marginal_at(target, spec, t)?;
    let sigma = spec.sigma();
    Ok(sup_with_ascent(|x| onesided_excess(&marg, sigma, x), points, step0).0)
}

/// One-sided Lipschitz decay: per-time suprema, envelope domination and the
/// time integral of the suprema.
pub fn check_property_b(
    target: &MixtureTarget,
    spec: &ForwardSpec,
    times: &[f64],
    points: &[Vec<f64>],
    step0: f64,
    beta: f64,
    constant: Option<f64>,
) -> Result<PropertyBReport> {
    let sup_excess = times
        .iter()
        .map(|&t| sup_onesided_excess(target, spec, t, points, step0))
        .collect::<Result<Vec<_>>>()?;
    let fitted = times
        .iter()
        .zip(&sup_excess)
        .map(|(&t, &v)| v / property_b_envelope(t, beta))
        .fold(0.0, f64::max);
    let c = constant.unwrap_or(fitted);
    let dominated = times
        .iter()
        .zip(&sup_excess)
        .all(|(&t, &v)| v <= c * property_b_envelope(t, beta));
    let integral = trapezoid(times, &sup_excess);
    Ok(PropertyBReport {
        times: times.to_vec(),
        sup_excess,
        fitted_constant: fitted,
        constant: c,
        dominated,
        integral,
        pass: dominated && integral.is_finite(),
    })
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PropertyCdReport {
    /// Per time pair: `max_x ‖r(t₁,x) − r(t₂,x)‖ / (|t₁−t₂|^{1/2} / t_min)` with `r = s* + x/σ²`.
    pub holder_ratios: Vec<f64>,
    /// Per time (first of each pair): `max_x ‖∇s*(t,x) + I/σ²‖₂ / (e^{−2t}(1 + 1/t))`.
    pub gradient_ratios: Vec<f64>,
    pub holder_constant: f64,
    pub gradient_constant: f64,
    pub pass: bool,
}

/// Time-Hölder and spatial-gradient checks of the regularized score `s* + x/σ²`
/// on the bulk points, against frozen constants.
pub fn check_properties_cd(
    target: &MixtureTarget,
    spec: &ForwardSpec,
    pairs: &[(f64, f64)],
    points: &[Vec<f64>],
    holder_constant: f64,
    gradient_constant: f64,
) -> Result<PropertyCdReport> {
    let inv_var = 1.0 / (spec.sigma() * spec.sigma());
    let mut holder_ratios = Vec::with_capacity(pairs.len());
    let mut gradient_ratios = Vec::with_capacity(pairs.len());
    for &(t1, t2) in pairs {
        let m1 = marginal_at(target, spec, t1)?;
        let m2 = marginal_at(target, spec, t2)?;
        let shape = (t1 - t2).abs().sqrt() / t1.min(t2);
        let mut worst: f64 = 0.0;
        let mut worst_grad: f64 = 0.0;
        for x in points {
            // The x/σ² parts cancel in the difference.
            let diff = math::dist(&m1.score(x), &m2.score(x));
            worst = worst.max(diff);
            let g = m1.score_jacobian(x).add_diag(inv_var);
            let eig = linalg::jacobi_eigenvalues(&g);
            let spec_norm = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            worst_grad = worst_grad.max(spec_norm);
        }
        holder_ratios.push(if shape > 0.0 { worst / shape } else { 0.0 });
        gradient_ratios.push(worst_grad / ((-2.0 * t1).exp() * (1.0 + 1.0 / t1)));
    }
    let pass = holder_ratios.iter().all(|r| *r <= holder_constant)
        && gradient_ratios.iter().all(|r| *r <= gradient_constant);
    Ok(PropertyCdReport { holder_ratios, gradient_ratios, holder_constant, gradient_constant, pass })
}

/// `sup_{x ∈ points} ‖s*(t,x) + x/σ²‖`.
pub fn sup_stationary_deviation(target: &MixtureTarget, spec: &ForwardSpec, t: f64, points: &[Vec<f64>]) -> Result<f64> {
    let marg = marginal_at(target, spec, t)?;
    let inv_var = 1.0 / (spec.sigma() * spec.sigma());
    Ok(points
        .iter()
        .map(|x| {
            let s = marg.score(x);
            s.iter().zip(x).map(|(si, xi)| (si + xi * inv_var).powi(2)).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sigma: f64) -> ForwardSpec {
        ForwardSpec::new(sigma).unwrap()
    }

    #[test]
    fn closed_forms_match_finite_differences() {
        let target = MixtureTarget::benchmark(3);
        for &t in &[1e-3, 0.1, 1.0, 30.0] {
            let (se, je) = finite_difference_errors(&target, &spec(1.0), t, &[0.3, -0.7, 1.1]).unwrap();
            assert!(se < 1e-6 && je < 1e-6, "t={t}: {se} {je}");
        }
    }

    #[test]
    fn marginal_at_zero_is_target() {
        let target = MixtureTarget::benchmark(3);
        let m = marginal_at(&target, &spec(1.0), 0.0).unwrap();
        assert_eq!(&m.mixture, target.mixture());
    }

    #[test]
    fn stationary_target_is_fixed() {
        let target = MixtureTarget::stationary(2, 1.5).unwrap();
        for t in [0.0, 0.3, 2.0, 40.0] {
            let m = marginal_at(&target, &spec(1.5), t).unwrap();
            let c = &m.mixture.components()[0];
            assert!(c.mean.iter().all(|v| *v == 0.0));
            assert!(c.cov.sub(&Matrix::identity(2).scaled(2.25)).frobenius_norm() < 1e-14);
        }
    }

    #[test]
    fn gaussian_marginal_at_one() {
        let mu = vec![1.0, -2.0];
        let cov = Matrix::from_rows(&[vec![0.5, 0.1], vec![0.1, 0.2]]);
        let target = MixtureTarget::gaussian(mu.clone(), cov.clone()).unwrap();
        let m = marginal_at(&target, &spec(1.0), 1.0).unwrap();
        let e = (-1.0f64).exp();
        let c = &m.mixture.components()[0];
        for i in 0..2 {
            assert!((c.mean[i] - e * mu[i]).abs() < 1e-15);
        }
        let want = cov.scaled(e * e).add_diag(1.0 - e * e);
        assert!(c.cov.sub(&want).frobenius_norm() < 1e-15);
    }

    #[test]
    fn stationary_score_is_linear() {
        let target = MixtureTarget::stationary(3, 1.0).unwrap();
        for t in [0.01, 1.0, 7.0] {
            let s = score(&target, &spec(1.0), t, &[1.0, 2.0, 3.0]).unwrap();
            for (i, v) in s.iter().enumerate() {
                assert!((v + (i + 1) as f64).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn score_mixes_to_stationary() {
        let target = MixtureTarget::benchmark(3);
        let sp = spec(1.0);
        let mut rng = Rng::new(2, 0);
        for _ in 0..50 {
            let mut x: Vec<f64> = (0..3).map(|_| rng.gaussian()).collect();
            let n = math::norm(&x);
            let r = 5.0 * rng.next_f64();
            x.iter_mut().for_each(|v| *v *= r / n);
            let s = score(&target, &sp, 30.0, &x).unwrap();
            for i in 0..3 {
                assert!((s[i] + x[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gaussian_jacobian_is_constant() {
        let cov = Matrix::from_rows(&[vec![0.5, 0.1], vec![0.1, 0.2]]);
        let target = MixtureTarget::gaussian(vec![1.0, 0.0], cov.clone()).unwrap();
        let sp = spec(1.0);
        let t = 0.4;
        let e2 = (-2.0 * t).exp();
        let marg_cov = cov.scaled(e2).add_diag(sp.sigma_t(t).powi(2));
        let want = linalg::cholesky_inverse(&linalg::cholesky(&marg_cov).unwrap()).scaled(-1.0);
        for x in [[0.0, 0.0], [3.0, -1.0]] {
            let j = score_jacobian(&target, &sp, t, &x).unwrap();
            assert!(j.sub(&want).frobenius_norm() < 1e-13);
        }
    }

    #[test]
    fn stationary_excess_is_zero() {
        let target = MixtureTarget::stationary(3, 1.0).unwrap();
        let m = marginal_at(&target, &spec(1.0), 0.5).unwrap();
        assert_eq!(onesided_excess(&m, 1.0, &[0.3, 0.2, 0.1]), 0.0);
    }

    #[test]
    fn property_a_stationary_ratio_below_one() {
        let target = MixtureTarget::stationary(2, 1.0).unwrap();
        let times = log_grid(1e-3, 10.0, 12);
        let pts = cube_grid(2, 10.0, 9);
        let r = check_property_a(&target, &spec(1.0), &times, &pts, 1.0).unwrap();
        assert!(r.pass && r.max_ratio <= 1.0);
    }

    #[test]
    fn property_b_stationary_is_zero() {
        let target = MixtureTarget::stationary(2, 1.0).unwrap();
        let times = log_grid(0.01, 5.0, 6);
        let r = check_property_b(&target, &spec(1.0), &times, &cube_grid(2, 3.0, 5), 0.5, 1.0, Some(1.0)).unwrap();
        assert!(r.sup_excess.iter().all(|v| *v == 0.0));
        assert!(r.pass);
        assert_eq!(r.integral, 0.0);
    }

    #[test]
    fn property_cd_stationary_is_exactly_zero() {
        let target = MixtureTarget::stationary(2, 1.0).unwrap();
        let r = check_properties_cd(&target, &spec(1.0), &[(1.0, 1.1), (0.1, 0.11)], &cube_grid(2, 2.0, 5), 0.0, 0.0)
            .unwrap();
        assert!(r.holder_ratios.iter().all(|v| *v < 1e-12));
        assert!(r.gradient_ratios.iter().all(|v| *v < 1e-14));
    }

    #[test]
    fn grids() {
        let g = cube_grid(2, 1.0, 3);
        assert_eq!(g.len(), 9);
        assert!(g.contains(&vec![-1.0, 1.0]) && g.contains(&vec![0.0, 0.0]));
        let t = log_grid(0.001, 10.0, 5);
        assert_eq!(t[0], 0.001);
        assert_eq!(t[4], 10.0);
        assert!((t[2] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn ascent_finds_interior_max() {
        let f = |x: &[f64]| -(x[0] - 0.3).powi(2) - (x[1] + 0.2).powi(2);
        let (v, x) = sup_with_ascent(f, &cube_grid(2, 1.0, 3), 0.5);
        assert!(v > -1e-3, "{v} at {x:?}");
    }
}
