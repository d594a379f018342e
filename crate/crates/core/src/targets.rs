//! Gaussian-mixture targets: exact density, log-density gradient (score at
//! time zero), Jacobian and sampling.
//!
//! [`GaussianMixture`] is the shared workhorse; the forward marginal of a
//! mixture under the OU process is again a mixture, so the oracle module
//! reuses it unchanged.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::math::{self, Float};
use crate::rng::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Matrix,
    chol: Matrix,
    precision: Matrix,
    // log(weight) - (d log 2π + log det Σ) / 2
    log_norm: f64,
}

impl Component {
    pub fn new(weight: f64, mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        let d = mean.len();
        if cov.rows() != d || cov.cols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: cov.rows() });
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::InvalidParams("component weight must be positive"));
        }
        if mean.iter().any(|v| !v.is_finite()) || !cov.is_finite() {
            return Err(Error::NonFinite("mixture component"));
        }
        if cov.max_asymmetry() > 1e-12 * (1.0 + cov.inf_norm()) {
            return Err(Error::InvalidParams("covariance must be symmetric"));
        }
        let chol = linalg::cholesky(&cov)?;
        let precision = linalg::cholesky_inverse(&chol);
        let log_norm = weight.ln() - 0.5 * (d as f64 * LN_2PI + linalg::cholesky_log_det(&chol));
        Ok(Component { weight, mean, cov, chol, precision, log_norm })
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    /// `log(weight · N(x; mean, cov))`.
    fn log_weighted_density(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        for ((s, xi), mi) in scratch.iter_mut().zip(x).zip(&self.mean) {
            *s = xi - mi;
        }
        linalg::solve_lower_in_place(&self.chol, scratch);
        self.log_norm - 0.5 * math::norm_sq(scratch)
    }

    /// `precision · (mean − x)`.
    fn pull(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let row = self.precision.row(i);
            *o = (0..d).map(|j| row[j] * (self.mean[j] - x[j])).sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    d: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    /// Weights must be positive and sum to one within 1e-9 (they are renormalized exactly).
    pub fn new(weights: &[f64], means: Vec<Vec<f64>>, covs: Vec<Matrix>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covs.len() {
            return Err(Error::InvalidParams("weights, means and covariances must align"));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidParams("dimension must be at least 1"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams("mixture weights must sum to 1"));
        }
        let mut components = Vec::with_capacity(weights.len());
        for ((&w, mean), cov) in weights.iter().zip(means).zip(covs) {
            if mean.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: mean.len() });
            }
            components.push(Component::new(w / total, mean, cov)?);
        }
        Ok(GaussianMixture { d, components })
    }

    pub fn from_components(components: Vec<Component>) -> Result<Self> {
        let d = components.first().map(|c| c.mean.len()).ok_or(Error::InvalidParams("empty mixture"))?;
        Ok(GaussianMixture { d, components })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    fn log_terms(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.log_weighted_density(x, scratch);
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut terms = vec![0.0; self.components.len()];
        let mut scratch = vec![0.0; self.d];
        self.log_terms(x, &mut terms, &mut scratch);
        math::log_sum_exp(&terms)
    }

    /// Posterior component probabilities at `x`, computed in log space.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let mut terms = vec![0.0; self.components.len()];
        let mut scratch = vec![0.0; self.d];
        self.log_terms(x, &mut terms, &mut scratch);
        normalize_log_weights(&mut terms);
        terms
    }

    /// `∇ log p(x) = Σ_l w_l(x) Σ_l⁻¹ (μ_l − x)`.
    pub fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.grad_log_density_into(x, &mut out);
        out
    }

    pub fn grad_log_density_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        out[..d].iter_mut().for_each(|v| *v = 0.0);
        let mut scratch = vec![0.0; d];
        if self.components.len() == 1 {
            self.components[0].pull(x, out);
            return;
        }
        let w = self.responsibilities(x);
        for (c, wl) in self.components.iter().zip(&w) {
            if *wl == 0.0 {
                continue;
            }
            c.pull(x, &mut scratch);
            for (o, s) in out.iter_mut().zip(&scratch) {
                *o += wl * s;
            }
        }
    }

    /// Hessian of `log p` at `x`:
    /// `Σ_l w_l (−P_l + m_l m_lᵀ) − m̄ m̄ᵀ` with `m_l = P_l (μ_l − x)`.
    pub fn hessian_log_density(&self, x: &[f64]) -> Matrix {
        let d = self.d;
        let w = self.responsibilities(x);
        let mut h = Matrix::zeros(d, d);
        let mut mbar = vec![0.0; d];
        let mut m = vec![0.0; d];
        for (c, wl) in self.components.iter().zip(&w) {
            if *wl == 0.0 {
                continue;
            }
            c.pull(x, &mut m);
            for i in 0..d {
                mbar[i] += wl * m[i];
                for j in 0..d {
                    h[(i, j)] += wl * (m[i] * m[j] - c.precision[(i, j)]);
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] -= mbar[i] * mbar[j];
            }
        }
        h.symmetrized()
    }

    /// Draws one point: component from the weights, then `μ + L z`.
    pub fn sample_one(&self, rng: &mut Rng, out: &mut [f64]) {
        let u = rng.next_f64();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (l, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = l;
                break;
            }
        }
        let c = &self.components[chosen];
        let d = self.d;
        let mut z = vec![0.0; d];
        rng.fill_gaussian(&mut z);
        for i in 0..d {
            let row = c.chol.row(i);
            out[i] = c.mean[i] + (0..=i).map(|k| row[k] * z[k]).sum::<f64>();
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for c in &self.components {
            for (mi, ci) in m.iter_mut().zip(&c.mean) {
                *mi += c.weight * ci;
            }
        }
        m
    }

    /// Mixture covariance `Σ_l α_l (Σ_l + μ_l μ_lᵀ) − μ̄ μ̄ᵀ`.
    pub fn covariance(&self) -> Matrix {
        let d = self.d;
        let mbar = self.mean();
        let mut cov = Matrix::zeros(d, d);
        for c in &self.components {
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] += c.weight * (c.cov[(i, j)] + c.mean[i] * c.mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] -= mbar[i] * mbar[j];
            }
        }
        cov
    }
}

/// In-place softmax of log-weights.
pub(crate) fn normalize_log_weights(terms: &mut [f64]) {
    let lse = math::log_sum_exp(terms);
    for t in terms.iter_mut() {
        *t = (*t - lse).exp();
    }
}

/// The data distribution: a weighted Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTarget {
    mixture: GaussianMixture,
}

impl MixtureTarget {
    pub fn new(weights: &[f64], means: Vec<Vec<f64>>, covs: Vec<Matrix>) -> Result<Self> {
        Ok(MixtureTarget { mixture: GaussianMixture::new(weights, means, covs)? })
    }

    pub fn from_mixture(mixture: GaussianMixture) -> Self {
        MixtureTarget { mixture }
    }

    /// `N(mean, cov)`.
    pub fn gaussian(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        Self::new(&[1.0], vec![mean], vec![cov])
    }

    /// `N(0, σ² I_d)`, the stationary law of the forward process.
    pub fn stationary(d: usize, sigma: f64) -> Result<Self> {
        Self::gaussian(vec![0.0; d], Matrix::identity(d).scaled(sigma * sigma))
    }

    /// Two equal-weight isotropic components at `±offset·e₁` with variance `var`.
    pub fn symmetric_pair(d: usize, offset: f64, var: f64) -> Result<Self> {
        let mut plus = vec![0.0; d];
        plus[0] = offset;
        let minus = plus.iter().map(|v| -v).collect();
        let cov = Matrix::identity(d).scaled(var);
        Self::new(&[0.5, 0.5], vec![plus, minus], vec![cov.clone(), cov])
    }

    /// The frozen two-Gaussian benchmark used by checks and experiments:
    /// components at `±1.5·e₁`, covariance `0.25·I`, equal weights.
    pub fn benchmark(d: usize) -> Self {
        Self::symmetric_pair(d, 1.5, 0.25).expect("benchmark parameters are valid")
    }

    pub fn dim(&self) -> usize {
        self.mixture.dim()
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    /// Verifies the mixture-class bounds for constant `a`: every `‖μ_l‖ ≤ a`
    /// and `a⁻¹ I ⪯ Σ_l⁻¹ ⪯ a I`.
    pub fn check_model_bounds(&self, a: f64) -> Result<()> {
        for c in self.mixture.components() {
            if math::norm(&c.mean) > a {
                return Err(Error::InvalidParams("component mean outside the ball of radius A"));
            }
            let eig = linalg::jacobi_eigenvalues(&c.cov);
            let (lo, hi) = (eig[0], eig[eig.len() - 1]);
            // Σ⁻¹ eigenvalues are 1/hi .. 1/lo.
            if 1.0 / hi < 1.0 / a * (1.0 - 1e-12) || 1.0 / lo > a * (1.0 + 1e-12) {
                return Err(Error::InvalidParams("covariance spectrum outside [1/A, A]"));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let mut x = vec![0.0; self.dim()];
                self.mixture.sample_one(rng, &mut x);
                x
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.mixture.log_density(x)
    }

    pub fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        self.mixture.grad_log_density(x)
    }
}

/// Sub-Gaussian tail certificate: `P(‖Y‖ ≥ √(κ log(1/ε))) ≤ ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubGaussianCert {
    pub kappa: f64,
}

impl SubGaussianCert {
    /// κ from `‖Y‖ ≤ max‖μ_l‖ + √λ_max(Σ_l)·‖Z‖` and the Laurent–Massart χ² tail
    /// `P(‖Z‖² ≥ d + 2√(dx) + 2x) ≤ e^{−x}`, valid for all `ε ≤ eps_max`.
    pub fn for_target(target: &MixtureTarget, eps_max: f64) -> Self {
        let d = target.dim() as f64;
        let mut radius: f64 = 0.0;
        let mut lam: f64 = 0.0;
        for c in target.mixture.components() {
            radius = radius.max(math::norm(&c.mean));
            lam = lam.max(*linalg::jacobi_eigenvalues(&c.cov).last().unwrap_or(&0.0));
        }
        let x_min = (1.0 / eps_max).ln();
        // The ratio below is decreasing in x for x ≥ x_min; scan a range to be safe.
        let kappa = (0..200)
            .map(|i| x_min * (1.0 + 0.05 * i as f64))
            .map(|x| {
                let r = radius + (lam * (d + 2.0 * (d * x).sqrt() + 2.0 * x)).sqrt();
                r * r / x
            })
            .fold(0.0, f64::max);
        SubGaussianCert { kappa }
    }

    pub fn radius(&self, eps: f64) -> f64 {
        (self.kappa * (1.0 / eps).ln()).sqrt()
    }

    /// Fraction of `points` with norm at least `radius(eps)`.
    pub fn tail_fraction(&self, points: &[Vec<f64>], eps: f64) -> f64 {
        let r = self.radius(eps);
        let hits = points.iter().filter(|p| math::norm(p) >= r).count();
        hits as f64 / points.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_component() -> MixtureTarget {
        MixtureTarget::new(
            &[0.2, 0.5, 0.3],
            vec![vec![1.0, -0.5], vec![-1.0, 0.3], vec![0.2, 1.2]],
            vec![
                Matrix::from_rows(&[vec![0.5, 0.1], vec![0.1, 0.3]]),
                Matrix::from_diag(&[0.4, 0.6]),
                Matrix::from_rows(&[vec![0.8, -0.2], vec![-0.2, 0.5]]),
            ],
        )
        .unwrap()
    }

    fn direct_density(t: &MixtureTarget, x: &[f64]) -> f64 {
        // Independent route: explicit inverse and determinant of each 2x2 covariance.
        t.mixture
            .components()
            .iter()
            .map(|c| {
                let (a, b, cc) = (c.cov[(0, 0)], c.cov[(0, 1)], c.cov[(1, 1)]);
                let det = a * cc - b * b;
                let (dx, dy) = (x[0] - c.mean[0], x[1] - c.mean[1]);
                let q = (cc * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
                c.weight * (-0.5 * q).exp() / (2.0 * core::f64::consts::PI * det.sqrt())
            })
            .sum()
    }

    #[test]
    fn standard_normal_log_density_at_origin() {
        let t = MixtureTarget::stationary(2, 1.0).unwrap();
        let want = -(2.0 * core::f64::consts::PI).ln();
        assert!((t.log_density(&[0.0, 0.0]) - want).abs() < 1e-15);
        assert!((want + 1.837_877_066_4).abs() < 1e-10);
    }

    #[test]
    fn far_field_log_density_is_finite() {
        let t = three_component();
        let lp = t.log_density(&[1e6, -3e5]);
        assert!(lp.is_finite() && lp < -1e10);
        let g = t.grad_log_density(&[1e6, -3e5]);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn log_density_matches_direct_sum() {
        let t = three_component();
        let mut rng = Rng::new(1, 2);
        for _ in 0..100 {
            let x = [rng.gaussian() * 2.0, rng.gaussian() * 2.0];
            let want = direct_density(&t, &x).ln();
            assert!((t.log_density(&x) - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn single_gaussian_gradient() {
        let s2 = 2.5;
        let t = MixtureTarget::stationary(3, s2.sqrt()).unwrap();
        let x = [0.3, -1.2, 2.0];
        let g = t.grad_log_density(&x);
        for i in 0..3 {
            assert!((g[i] + x[i] / s2).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_pair_gradient_vanishes_at_origin() {
        let t = MixtureTarget::symmetric_pair(3, 2.0, 0.5).unwrap();
        assert!(t.grad_log_density(&[0.0; 3]).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(8, 0);
        for _ in 0..200 {
            let t = random_target(&mut rng);
            let d = t.dim();
            let x: Vec<f64> = (0..d).map(|_| 1.5 * rng.gaussian()).collect();
            let g = t.grad_log_density(&x);
            let h = 1e-5;
            let fd: Vec<f64> = (0..d)
                .map(|i| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    (t.log_density(&xp) - t.log_density(&xm)) / (2.0 * h)
                })
                .collect();
            let err = math::dist(&g, &fd) / math::norm(&g).max(1e-3);
            assert!(err <= 1e-5, "relative error {err}");
        }
    }

    pub(crate) fn random_target(rng: &mut Rng) -> MixtureTarget {
        let d = 1 + rng.below(3);
        let k = 1 + rng.below(3);
        let raw: Vec<f64> = (0..k).map(|_| 0.2 + rng.next_f64()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let means = (0..k).map(|_| (0..d).map(|_| 1.5 * rng.gaussian()).collect()).collect();
        let covs = (0..k)
            .map(|_| {
                let b = Matrix::from_row_major(d, d, (0..d * d).map(|_| 0.4 * rng.gaussian()).collect());
                b.transpose().matmul(&b).add_diag(0.2)
            })
            .collect();
        MixtureTarget::new(&weights, means, covs).unwrap()
    }

    #[test]
    fn hessian_matches_gradient_finite_differences() {
        let mut rng = Rng::new(9, 0);
        for _ in 0..50 {
            let t = random_target(&mut rng);
            let d = t.dim();
            let x: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
            let h = t.mixture.hessian_log_density(&x);
            let step = 1e-5;
            for j in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += step;
                xm[j] -= step;
                let gp = t.grad_log_density(&xp);
                let gm = t.grad_log_density(&xm);
                for i in 0..d {
                    let fd = (gp[i] - gm[i]) / (2.0 * step);
                    assert!((h[(i, j)] - fd).abs() < 1e-5 * (1.0 + fd.abs()));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_weights_and_covariances() {
        let bad = MixtureTarget::new(&[0.3, 0.3], vec![vec![0.0], vec![1.0]], vec![Matrix::identity(1); 2]);
        assert!(matches!(bad, Err(Error::InvalidParams(_))));
        let neg = MixtureTarget::new(&[1.0], vec![vec![0.0, 0.0]], vec![Matrix::from_diag(&[1.0, -1.0])]);
        assert!(matches!(neg, Err(Error::NotSpd { .. })));
    }

    #[test]
    fn model_bounds() {
        let t = MixtureTarget::benchmark(3);
        assert!(t.check_model_bounds(4.0).is_ok());
        assert!(t.check_model_bounds(1.4).is_err());
    }

    #[test]
    fn moments_of_mixture() {
        let t = MixtureTarget::symmetric_pair(2, 2.0, 0.5).unwrap();
        let m = t.mixture().mean();
        assert!(m.iter().all(|v| v.abs() < 1e-15));
        let c = t.mixture().covariance();
        assert!((c[(0, 0)] - 4.5).abs() < 1e-14);
        assert!((c[(1, 1)] - 0.5).abs() < 1e-14);
    }
}
