//! Denoising score matching. For data point `x` and fine interval `[a, b)`
//! the contrast is
//! `γ(s, x) = ∫_a^b E_Z ‖s(t, e^{−t}x + σ_t Z) + Z/σ_t‖² dt`,
//! and each interval's network minimizes its empirical mean with Adam, plus
//! a hinge penalty on the one-sided Lipschitz constant of the network.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::forward::ForwardSpec;
use crate::linalg;
use crate::math::{self, Float};
use crate::oracle;
use crate::rng::Rng;
use crate::schedule::TimeSchedule;
use crate::scorenet::{estimate_net_onesided_lipschitz, ScoreField, ScoreModel, TanhNet, Workspace};
use crate::targets::MixtureTarget;

/// Stream id of the training generator derived from `TrainConfig::seed`.
pub const TRAIN_STREAM: u64 = 0x74_7261_696e;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    /// Quadrature nodes per interval.
    pub time_nodes: usize,
    /// Gaussian draws per (sample, node). With `antithetic` each draw is used as `±Z`.
    pub z_draws: usize,
    pub antithetic: bool,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning rate after cosine decay, as a fraction of `lr`.
    pub lr_final_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Hinge weight μ on `max(0, λ̂ − V′)²`.
    pub penalty_weight: f64,
    /// Minibatch points that get a Lipschitz probe each iteration.
    pub penalty_probes: usize,
    /// Probe points for the post-training Lipschitz check.
    pub check_probes: usize,
    /// Nets whose probe estimate exceeds `rescale_tolerance·V′` get their output scaled down.
    pub rescale_tolerance: f64,
    /// Fit a factor `c ∈ [0, 1]` on the output after optimization (see [`fit_output_shrink`]).
    pub shrink: bool,
    pub log_every: usize,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            time_nodes: 2,
            z_draws: 2,
            antithetic: true,
            iterations: 400,
            batch: 32,
            lr: 5e-3,
            lr_final_frac: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            penalty_weight: 1.0,
            penalty_probes: 4,
            check_probes: 64,
            rescale_tolerance: 1.2,
            shrink: true,
            log_every: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_nodes < 2 {
            return Err(Error::InvalidParams("time_nodes must be at least 2"));
        }
        if self.z_draws == 0 || self.batch == 0 {
            return Err(Error::InvalidParams("z_draws and batch must be positive"));
        }
        if !(self.lr > 0.0) || !(self.adam_eps > 0.0) || !(self.lr_final_frac > 0.0) {
            return Err(Error::InvalidParams("learning rate and adam eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParams("adam moments must lie in [0, 1)"));
        }
        if !(self.penalty_weight >= 0.0) || !(self.rescale_tolerance >= 1.0) {
            return Err(Error::InvalidParams("penalty weight must be nonnegative and rescale tolerance at least 1"));
        }
        Ok(())
    }
}

/// Forward-process constants at schedule time `t`: `(e^{−u}, σ_u)` with `u` the marginal time.
fn noise_coefficients(spec: &ForwardSpec, t: f64) -> Result<(f64, f64)> {
    let u = spec.marginal_time(t)?;
    Ok(((-u).exp(), spec.sigma_t(u)))
}

/// Midpoint-rule Monte Carlo estimate of `γ(s, x)` over `[t0, t1]`, with
/// `z_draws` Gaussian draws per node taken from `rng` (pass equal generators
/// to compare candidates under common random numbers).
pub fn contrast_mc(
    score: &dyn ScoreField,
    spec: &ForwardSpec,
    x: &[f64],
    (t0, t1): (f64, f64),
    time_nodes: usize,
    z_draws: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let d = x.len();
    let dt = (t1 - t0) / time_nodes as f64;
    let mut z = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut s = vec![0.0; d];
    let mut total = 0.0;
    for m in 0..time_nodes {
        let t = t0 + (m as f64 + 0.5) * dt;
        let (decay, st) = noise_coefficients(spec, t)?;
        let mut acc = 0.0;
        for _ in 0..z_draws {
            rng.fill_gaussian(&mut z);
            for i in 0..d {
                y[i] = decay * x[i] + st * z[i];
            }
            score.score_into(t, &y, &mut s)?;
            acc += s.iter().zip(&z).map(|(si, zi)| (si + zi / st).powi(2)).sum::<f64>();
        }
        total += dt * acc / z_draws as f64;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TrainRecord {
    pub iteration: usize,
    /// Minibatch DSM loss per unit time, minus its `E‖Z/σ_t‖²` part.
    pub dsm_loss: f64,
    pub penalty: f64,
    /// Largest probe `λ̂_max` in the minibatch.
    pub lambda_hat: f64,
    /// Seconds since the interval started, from the caller's clock.
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct IntervalLog {
    pub k: usize,
    pub j: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub records: Vec<TrainRecord>,
    pub final_loss: f64,
    /// Post-training probe estimate of `λ_max(∇S)` before any rescaling.
    pub lambda_check: f64,
    pub lip_cap: f64,
    /// Output factor applied when the check failed, else 1.
    pub rescale: f64,
    /// `‖θ_final − θ_init‖₂`.
    pub param_movement: f64,
    /// Output factor from the shrinkage fit (1 when disabled).
    pub shrink: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.adam_eps);
        }
    }
}

fn cosine_lr(cfg: &TrainConfig, it: usize) -> f64 {
    let frac = if cfg.iterations > 1 { it as f64 / (cfg.iterations - 1) as f64 } else { 0.0 };
    let lo = cfg.lr * cfg.lr_final_frac;
    lo + 0.5 * (cfg.lr - lo) * (1.0 + (core::f64::consts::PI * frac).cos())
}

/// Hinge penalty at one probe and its parameter gradient (accumulated into `grad`).
/// `∂λ̂/∂θ` uses `λ̂ = uᵀ∇S u` for the top eigenvector `u`, differentiated as a
/// central difference of `∇_θ(u·S)` along `u`.
#[allow(clippy::too_many_arguments)]
fn penalty_at(
    net: &TanhNet,
    ws: &mut Workspace,
    t: f64,
    y: &[f64],
    cap: f64,
    weight: f64,
    grad: &mut [f64],
    scratch: &mut [f64],
) -> Result<(f64, f64)> {
    let jac = net.input_jacobian(ws, t, y).symmetrized();
    let tol = 1e-10 * (1.0 + jac.inf_norm());
    let (lam, u) = match linalg::top_eigenpair_symmetric(&jac, tol) {
        Ok(p) => p,
        Err(Error::NoConvergence { .. }) => return Ok((0.0, linalg::jacobi_eigenvalues(&jac).last().copied().unwrap_or(0.0))),
        Err(e) => return Err(e),
    };
    let excess = lam - cap;
    if excess <= 0.0 || weight == 0.0 {
        return Ok((0.0, lam));
    }
    let h = 1e-4;
    let d = y.len();
    let mut shifted = vec![0.0; d];
    let mut out = vec![0.0; d];
    let coef = 2.0 * weight * excess / (2.0 * h);
    for (sign, c) in [(1.0, coef), (-1.0, -coef)] {
        for i in 0..d {
            shifted[i] = y[i] + sign * h * u[i];
        }
        scratch.iter_mut().for_each(|g| *g = 0.0);
        net.forward(ws, t, &shifted, &mut out);
        net.backward(ws, &u, scratch, None);
        for (g, s) in grad.iter_mut().zip(scratch.iter()) {
            *g += c * s;
        }
    }
    Ok((weight * excess * excess, lam))
}

/// Trains the network of fine interval `(k, j)` on `data`.
/// The generator is `Rng::new(cfg.seed, TRAIN_STREAM).substream_path(&[k, j])`,
/// so intervals can be trained in any order or in parallel.
pub fn train_interval(
    data: &[Vec<f64>],
    schedule: &TimeSchedule,
    spec: &ForwardSpec,
    cfg: &TrainConfig,
    k: usize,
    j: usize,
) -> Result<(TanhNet, IntervalLog)> {
    train_interval_with_clock(data, schedule, spec, cfg, k, j, &|| 0.0)
}

#[allow(clippy::too_many_arguments)]
/// [`train_interval`] with `clock()` (seconds, any origin) stamped into each record.
pub fn train_interval_with_clock(
    data: &[Vec<f64>],
    schedule: &TimeSchedule,
    spec: &ForwardSpec,
    cfg: &TrainConfig,
    k: usize,
    j: usize,
    clock: &dyn Fn() -> f64,
) -> Result<(TanhNet, IntervalLog)> {
    let started = clock();
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParams("training data is empty"));
    }
    let d = schedule.d;
    if let Some(bad) = data.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let base = Rng::new(cfg.seed, TRAIN_STREAM).substream_path(&[k as u64, j as u64]);
    let (t0, t1) = schedule.interval(k, j);
    let arch = *schedule.arch(k);
    let mut init_rng = base.substream(0);
    let mut rng = base.substream(1);
    let mut net = TanhNet::init(d, arch, t0, t1, &mut init_rng);
    let init_params = net.params().to_vec();
    let inv_var = 1.0 / (spec.sigma() * spec.sigma());

    let np = net.param_count();
    let mut adam = Adam::new(np);
    let mut grad = vec![0.0; np];
    let mut scratch = vec![0.0; np];
    let mut ws = net.workspace();
    let mut z = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut out = vec![0.0; d];
    let mut r = vec![0.0; d];
    let mut probe_ys: Vec<(f64, Vec<f64>)> = Vec::with_capacity(cfg.penalty_probes);
    let nodes = cfg.time_nodes;
    let dt = (t1 - t0) / nodes as f64;
    let signs: &[f64] = if cfg.antithetic { &[1.0, -1.0] } else { &[1.0] };
    let per_point = (nodes * cfg.z_draws * signs.len()) as f64;
    let mut records = Vec::new();
    let mut last_loss = f64::NAN;

    for it in 0..cfg.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        probe_ys.clear();
        let mut loss = 0.0;
        for b in 0..cfg.batch {
            let x = &data[rng.below(data.len())];
            for m in 0..nodes {
                // Stratified time: one uniform draw per quadrature cell.
                let t = t0 + (m as f64 + rng.next_f64()) * dt;
                let (decay, st) = noise_coefficients(spec, t)?;
                for _ in 0..cfg.z_draws {
                    rng.fill_gaussian(&mut z);
                    for &sg in signs {
                        for i in 0..d {
                            y[i] = decay * x[i] + sg * st * z[i];
                        }
                        net.forward(&mut ws, t, &y, &mut out);
                        for i in 0..d {
                            r[i] = out[i] - y[i] * inv_var + sg * z[i] / st;
                        }
                        let w = 1.0 / (per_point * cfg.batch as f64);
                        loss += w * (math::norm_sq(&r) - d as f64 / (st * st));
                        for ri in r.iter_mut() {
                            *ri *= 2.0 * w;
                        }
                        net.backward(&mut ws, &r, &mut grad, None);
                    }
                }
                if m == 0 && b < cfg.penalty_probes {
                    probe_ys.push((t, y.clone()));
                }
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { k, j, iteration: it });
        }
        let mut penalty = 0.0;
        let mut lam_max = f64::NEG_INFINITY;
        if cfg.penalty_probes > 0 && !probe_ys.is_empty() {
            let scale = 1.0 / probe_ys.len() as f64;
            let mut pg = vec![0.0; np];
            for (t, py) in &probe_ys {
                let (p, lam) = penalty_at(&net, &mut ws, *t, py, arch.lip_cap, cfg.penalty_weight, &mut pg, &mut scratch)?;
                penalty += scale * p;
                lam_max = lam_max.max(lam);
            }
            for (g, p) in grad.iter_mut().zip(&pg) {
                *g += scale * p;
            }
        }
        if !penalty.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { k, j, iteration: it });
        }
        adam.update(net.params_mut(), &grad, cosine_lr(cfg, it), cfg);
        net.project_weights();
        last_loss = loss;
        if cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.iterations) {
            records.push(TrainRecord { iteration: it, dsm_loss: loss, penalty, lambda_hat: lam_max, wall_s: clock() - started });
        }
    }

    let shrink = if cfg.shrink {
        let c = fit_output_shrink(&net, data, spec, cfg, &mut base.substream(3))?;
        net.scale_output(c);
        c
    } else {
        1.0
    };

    // Post-training check on noised data at the interval midpoint.
    let t_mid = 0.5 * (t0 + t1);
    let (decay, st) = noise_coefficients(spec, t_mid)?;
    let mut check_rng = base.substream(2);
    let probes: Vec<Vec<f64>> = (0..cfg.check_probes.max(1))
        .map(|_| {
            let x = &data[check_rng.below(data.len())];
            check_rng.fill_gaussian(&mut z);
            x.iter().zip(&z).map(|(xi, zi)| decay * xi + st * zi).collect()
        })
        .collect();
    let lambda_check = estimate_net_onesided_lipschitz(&net, t_mid, &probes)?;
    let mut rescale = 1.0;
    if arch.lip_cap > 0.0 && lambda_check > cfg.rescale_tolerance * arch.lip_cap {
        rescale = arch.lip_cap / lambda_check;
        net.scale_output(rescale);
    }
    let param_movement = net.params().iter().zip(&init_params).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let log = IntervalLog {
        k,
        j,
        t_start: t0,
        t_end: t1,
        records,
        final_loss: last_loss,
        lambda_check,
        lip_cap: arch.lip_cap,
        rescale,
        param_movement,
        shrink,
    };
    Ok((net, log))
}

/// The `c ∈ [0, 1]` minimizing the empirical contrast of `−y/σ² + c·S` over
/// all of `data`, with fresh stratified times and antithetic draws. The contrast
/// is `c²A + 2cB + const`, so `c = clamp(−B/A, 0, 1)`. Where the network has only
/// learned noise this pulls it back toward the stationary score.
pub fn fit_output_shrink(net: &TanhNet, data: &[Vec<f64>], spec: &ForwardSpec, cfg: &TrainConfig, rng: &mut Rng) -> Result<f64> {
    let d = net.dim();
    let (t0, t1) = net.interval();
    let dt = (t1 - t0) / cfg.time_nodes as f64;
    let inv_var = 1.0 / (spec.sigma() * spec.sigma());
    let mut ws = net.workspace();
    let (mut z, mut y, mut out) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let (mut a, mut b) = (0.0, 0.0);
    for x in data {
        for m in 0..cfg.time_nodes {
            let t = t0 + (m as f64 + rng.next_f64()) * dt;
            let (decay, st) = noise_coefficients(spec, t)?;
            for _ in 0..cfg.z_draws {
                rng.fill_gaussian(&mut z);
                for sg in [1.0, -1.0] {
                    for i in 0..d {
                        y[i] = decay * x[i] + sg * st * z[i];
                    }
                    net.forward(&mut ws, t, &y, &mut out);
                    for i in 0..d {
                        a += out[i] * out[i];
                        b += out[i] * (sg * z[i] / st - y[i] * inv_var);
                    }
                }
            }
        }
    }
    if !(a > 0.0) {
        return Ok(1.0);
    }
    let c = (-b / a).clamp(0.0, 1.0);
    if c.is_finite() {
        Ok(c)
    } else {
        Err(Error::Diverged { k: 0, j: 0, iteration: cfg.iterations })
    }
}

/// Trains every interval in schedule order.
pub fn train_all(
    data: &[Vec<f64>],
    schedule: &TimeSchedule,
    spec: &ForwardSpec,
    cfg: &TrainConfig,
) -> Result<(ScoreModel, Vec<IntervalLog>)> {
    let mut nets = Vec::with_capacity(schedule.total_intervals());
    let mut logs = Vec::with_capacity(schedule.total_intervals());
    for &(k, j) in schedule.intervals() {
        let (net, log) = train_interval(data, schedule, spec, cfg, k, j)?;
        nets.push(net);
        logs.push(log);
    }
    Ok((ScoreModel::from_nets(schedule.clone(), spec.sigma(), nets)?, logs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FisherEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `∫_{t0}^{t1} E‖s*(t,X_t) − s(t,X_t)‖² dt`: midpoint
/// rule with `n_time` nodes, `n_mc` forward-marginal draws per node from
/// `rng.substream(node)`.
pub fn fisher_loss(
    score: &dyn ScoreField,
    target: &MixtureTarget,
    spec: &ForwardSpec,
    (t0, t1): (f64, f64),
    n_time: usize,
    n_mc: usize,
    rng: &Rng,
) -> Result<FisherEstimate> {
    if n_time == 0 || n_mc == 0 {
        return Err(Error::InvalidParams("fisher loss needs at least one node and one draw"));
    }
    let d = target.dim();
    let dt = (t1 - t0) / n_time as f64;
    let mut value = 0.0;
    let mut var = 0.0;
    let mut s_hat = vec![0.0; d];
    let mut s_true = vec![0.0; d];
    for m in 0..n_time {
        let t = t0 + (m as f64 + 0.5) * dt;
        let xs = spec.marginal_sample(target, &rng.substream(m as u64), t, n_mc)?;
        let marg = oracle::marginal_at(target, spec, t)?;
        let slice = score.at_time(t)?;
        let errs: Vec<f64> = xs
            .iter()
            .map(|x| {
                slice.eval(x, &mut s_hat);
                marg.mixture.grad_log_density_into(x, &mut s_true);
                math::dist(&s_hat, &s_true).powi(2)
            })
            .collect();
        let (mean, se) = crate::metrics::mean_and_se(&errs);
        value += dt * mean;
        var += (dt * se).powi(2);
    }
    Ok(FisherEstimate { value, std_error: var.sqrt() })
}

/// Per-interval Fisher losses of `score` over the schedule, in interval order.
/// Node `m` of interval `i` uses the draws of `rng.substream(i).substream(m)`.
pub fn fisher_by_interval(
    score: &dyn ScoreField,
    target: &MixtureTarget,
    spec: &ForwardSpec,
    schedule: &TimeSchedule,
    n_time: usize,
    n_mc: usize,
    rng: &Rng,
) -> Result<Vec<FisherEstimate>> {
    schedule
        .intervals()
        .iter()
        .enumerate()
        .map(|(i, &(k, j))| fisher_loss(score, target, spec, schedule.interval(k, j), n_time, n_mc, &rng.substream(i as u64)))
        .collect()
}

/// Sum of [`fisher_by_interval`]: the loss over `[T̲, T̄]`.
pub fn total_fisher(parts: &[FisherEstimate]) -> FisherEstimate {
    FisherEstimate {
        value: parts.iter().map(|p| p.value).sum(),
        std_error: parts.iter().map(|p| p.std_error * p.std_error).sum::<f64>().sqrt(),
    }
}
