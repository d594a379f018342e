//! Empirical Wasserstein-1 distances and moment diagnostics.

use alloc::vec;
use alloc::vec::Vec;

use crate::assignment::assignment_min_cost;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math::{self, Float};
use crate::rng::Rng;

pub const EXACT_MAX_POINTS: usize = 4096;
pub const AUTO_EXACT_THRESHOLD: usize = 1024;
pub const DEFAULT_PROJECTIONS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum W1Method {
    ExactAssignment,
    Sliced,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct W1Estimate {
    pub value: f64,
    pub method: W1Method,
    pub n_points: usize,
    pub n_projections: usize,
    pub std_error: f64,
}

fn check_sizes(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::SizeMismatch { left: xs.len(), right: ys.len() });
    }
    Ok(())
}

/// Exact empirical W₁ via minimum-cost perfect matching.
pub fn w1_exact(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    check_sizes(xs, ys)?;
    let n = xs.len();
    if n > EXACT_MAX_POINTS {
        return Err(Error::TooLarge { n, max: EXACT_MAX_POINTS });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut cost = Matrix::zeros(n, n);
    for (i, x) in xs.iter().enumerate() {
        for (j, y) in ys.iter().enumerate() {
            cost[(i, j)] = math::dist(x, y);
        }
    }
    Ok(assignment_min_cost(&cost)?.cost / n as f64)
}

/// 1-D W₁ between equal-size samples: mean absolute difference of order statistics.
/// Sorts both inputs in place.
pub fn w1_sorted_1d(a: &mut [f64], b: &mut [f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("w1 input"));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    Ok(a.iter().zip(b.iter()).map(|(u, v)| (u - v).abs()).sum::<f64>() / a.len() as f64)
}

/// Uniformly random unit vector in ℝᵈ.
pub fn random_direction(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; d];
        rng.fill_gaussian(&mut v);
        let n = math::norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|c| *c /= n);
            return v;
        }
    }
}

/// Sliced W₁: average over `n_proj` random directions of the projected 1-D W₁.
pub fn w1_sliced(xs: &[Vec<f64>], ys: &[Vec<f64>], n_proj: usize, rng: &mut Rng) -> Result<W1Estimate> {
    check_sizes(xs, ys)?;
    let n = xs.len();
    let d = xs.first().or(ys.first()).map_or(0, |x| x.len());
    let n_proj = n_proj.max(1);
    if n == 0 || d == 0 {
        return Ok(W1Estimate { value: 0.0, method: W1Method::Sliced, n_points: n, n_projections: n_proj, std_error: 0.0 });
    }
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut vals = Vec::with_capacity(n_proj);
    for _ in 0..n_proj {
        let dir = random_direction(rng, d);
        for (slot, x) in a.iter_mut().zip(xs) {
            *slot = math::dot(&dir, x);
        }
        for (slot, y) in b.iter_mut().zip(ys) {
            *slot = math::dot(&dir, y);
        }
        vals.push(w1_sorted_1d(&mut a, &mut b)?);
    }
    let (mean, se) = mean_and_se(&vals);
    Ok(W1Estimate { value: mean, method: W1Method::Sliced, n_points: n, n_projections: n_proj, std_error: se })
}

/// Exact assignment for `n ≤ 1024`, sliced with the default projection count otherwise.
pub fn w1_auto(xs: &[Vec<f64>], ys: &[Vec<f64>], rng: &mut Rng) -> Result<W1Estimate> {
    check_sizes(xs, ys)?;
    if xs.len() <= AUTO_EXACT_THRESHOLD {
        Ok(W1Estimate {
            value: w1_exact(xs, ys)?,
            method: W1Method::ExactAssignment,
            n_points: xs.len(),
            n_projections: 0,
            std_error: 0.0,
        })
    } else {
        w1_sliced(xs, ys, DEFAULT_PROJECTIONS, rng)
    }
}

/// Sample mean and its standard error (`sd / √n`, zero for fewer than two values).
pub fn mean_and_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct MomentReport {
    pub n: usize,
    pub mean: Vec<f64>,
    /// Unbiased covariance, row-major.
    pub covariance: Vec<Vec<f64>>,
    /// 50%, 90% and 99% quantiles of `‖x‖`.
    pub radial_quantiles: [f64; 3],
}

impl MomentReport {
    pub fn covariance_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.covariance)
    }
}

pub fn moment_report(xs: &[Vec<f64>]) -> Result<MomentReport> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidParams("moment report needs at least two points"));
    }
    let d = xs[0].len();
    let mut mean = vec![0.0; d];
    for x in xs {
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![vec![0.0; d]; d];
    for x in xs {
        for i in 0..d {
            let ci = x[i] - mean[i];
            for j in i..d {
                cov[i][j] += ci * (x[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let mut radii: Vec<f64> = xs.iter().map(|x| math::norm(x)).collect();
    radii.sort_unstable_by(f64::total_cmp);
    let q = |p: f64| radii[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
    Ok(MomentReport { n, mean, covariance: cov, radial_quantiles: [q(0.5), q(0.9), q(0.99)] })
}
