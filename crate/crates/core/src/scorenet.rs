//! Candidate scores: `s(t, x) = −x/σ² + S_{k,j}(t, x)` where `S_{k,j}` is a
//! fully connected tanh network owned by the fine interval containing `t`.
//!
//! Each network reads `[t̃, x]` with `t̃ = (t − τ_{k,j})/(τ_{k,j+1} − τ_{k,j})`,
//! has `depth` tanh hidden layers of equal width and a linear read-out passed
//! through the smooth clip `y ↦ V·tanh(y/V)`, so `‖S‖_∞ ≤ V` holds exactly.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::math::Float;
use crate::rng::Rng;
use crate::schedule::{IntervalArch, TimeSchedule};

/// A score evaluable at fixed time.
pub trait ScoreSlice {
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

/// A time-dependent vector field `s(t, x)` on `ℝᵈ`.
pub trait ScoreField: Send + Sync {
    fn dim(&self) -> usize;

    fn score_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// Freezes time; implementations may precompute per-time quantities here.
    fn at_time(&self, t: f64) -> Result<Box<dyn ScoreSlice + '_>> {
        // Probe once so range errors surface here rather than in `eval`.
        let d = self.dim();
        let mut probe = vec![0.0; d];
        self.score_into(t, &vec![0.0; d], &mut probe)?;
        Ok(Box::new(FixedTime { field: self, t }))
    }

    fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(t, x, &mut out)?;
        Ok(out)
    }
}

struct FixedTime<'a, F: ?Sized> {
    field: &'a F,
    t: f64,
}

impl<F: ScoreField + ?Sized> ScoreSlice for FixedTime<'_, F> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.field.score_into(self.t, x, out).expect("time validated by at_time");
    }
}

/// The stationary score `−x/σ²`: exact for `N(0, σ²I)` and the untrained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryScore {
    pub d: usize,
    pub sigma: f64,
}

impl ScoreField for StationaryScore {
    fn dim(&self) -> usize {
        self.d
    }

    fn score_into(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let inv = 1.0 / (self.sigma * self.sigma);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -xi * inv;
        }
        Ok(())
    }
}

/// Wraps a closure `(t, x, out)` as a score field.
pub struct FnScore<F> {
    pub d: usize,
    pub f: F,
}

impl<F> FnScore<F> {
    pub fn new(d: usize, f: F) -> Self {
        FnScore { d, f }
    }
}

impl<F> ScoreField for FnScore<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.d
    }

    fn score_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(t, x, out);
        Ok(())
    }
}

/// Activation buffers reused across forward/backward passes of one network.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    // acts[0] is the input; acts[l+1] the post-activation of layer l
    // (for the last layer: the pre-squash read-out).
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TanhNet {
    dims: Vec<usize>,
    params: Vec<f64>,
    arch: IntervalArch,
    t_start: f64,
    t_end: f64,
    gain: f64,
}

impl TanhNet {
    /// All-zero network for input dimension `d` on `[t_start, t_end]`.
    pub fn zeros(d: usize, arch: IntervalArch, t_start: f64, t_end: f64) -> Self {
        let mut dims = vec![d + 1];
        dims.extend(core::iter::repeat_n(arch.width, arch.depth));
        dims.push(d);
        let count = param_count(&dims);
        TanhNet { dims, params: vec![0.0; count], arch, t_start, t_end, gain: 1.0 }
    }

    /// Hidden weights and biases uniform in `±1/√fan_in` (clipped to the weight
    /// bound); the read-out layer is zero, so the net starts at `S ≡ 0`.
    pub fn init(d: usize, arch: IntervalArch, t_start: f64, t_end: f64, rng: &mut Rng) -> Self {
        let mut net = Self::zeros(d, arch, t_start, t_end);
        let layers = net.dims.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (net.dims[l], net.dims[l + 1]);
            let len = fan_in * fan_out + fan_out;
            if l + 1 < layers {
                let a = 1.0 / (fan_in as f64).sqrt();
                for p in &mut net.params[off..off + len] {
                    *p = (a * (2.0 * rng.next_f64() - 1.0)).clamp(-arch.weight_bound, arch.weight_bound);
                }
            }
            off += len;
        }
        net
    }

    pub fn from_parts(
        dims: Vec<usize>,
        params: Vec<f64>,
        arch: IntervalArch,
        interval: (f64, f64),
        gain: f64,
    ) -> Result<Self> {
        if dims.len() < 2 || dims[0] != dims[dims.len() - 1] + 1 {
            return Err(Error::InvalidParams("network dims must be [d+1, ..., d]"));
        }
        if params.len() != param_count(&dims) {
            return Err(Error::SizeMismatch { left: params.len(), right: param_count(&dims) });
        }
        Ok(TanhNet { dims, params, arch, t_start: interval.0, t_end: interval.1, gain })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn arch(&self) -> &IntervalArch {
        &self.arch
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    /// Output multiplier (1 unless the net was rescaled to meet its Lipschitz cap).
    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn scale_output(&mut self, factor: f64) {
        self.gain *= factor;
    }

    /// Clamps every parameter to `±weight_bound`.
    pub fn project_weights(&mut self) {
        let b = self.arch.weight_bound;
        for p in &mut self.params {
            *p = p.clamp(-b, b);
        }
    }

    pub fn normalized_time(&self, t: f64) -> f64 {
        (t - self.t_start) / (self.t_end - self.t_start)
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.dims.iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; *self.dims.iter().max().unwrap_or(&0)],
            delta_next: vec![0.0; *self.dims.iter().max().unwrap_or(&0)],
        }
    }

    /// Network output `S(t, x)` (bounded part only, no skip term) written to `out`.
    pub fn forward(&self, ws: &mut Workspace, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        ws.acts[0][0] = self.normalized_time(t);
        ws.acts[0][1..].copy_from_slice(x);
        let layers = self.dims.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let input = &head[l];
            let output = &mut tail[0];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, ai) in row.iter().zip(input.iter()) {
                    acc += wi * ai;
                }
                output[o] = if l + 1 < layers { acc.tanh() } else { acc };
            }
            off += n_in * n_out + n_out;
        }
        let v = self.arch.sup_cap;
        for (o, y) in out.iter_mut().zip(&ws.acts[layers]) {
            *o = self.gain * v * (y / v).tanh();
        }
    }

    /// Reverse pass after [`forward`](Self::forward) with the same workspace:
    /// adds `∂(upstream·S)/∂θ` into `param_grad` and writes `∂(upstream·S)/∂x`
    /// into `input_grad` when provided.
    pub fn backward(
        &self,
        ws: &mut Workspace,
        upstream: &[f64],
        param_grad: &mut [f64],
        input_grad: Option<&mut [f64]>,
    ) {
        let layers = self.dims.len() - 1;
        let v = self.arch.sup_cap;
        let d = self.dim();
        for i in 0..d {
            let th = (ws.acts[layers][i] / v).tanh();
            ws.delta[i] = upstream[i] * self.gain * (1.0 - th * th);
        }
        let mut off_end = self.params.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let off = off_end - (n_in * n_out + n_out);
            let input = &ws.acts[l];
            {
                let (gw, gb) = param_grad[off..off_end].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let dl = ws.delta[o];
                    if dl == 0.0 {
                        continue;
                    }
                    gb[o] += dl;
                    for (g, a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input.iter()) {
                        *g += dl * a;
                    }
                }
            }
            let w = &self.params[off..off + n_in * n_out];
            for i in 0..n_in {
                ws.delta_next[i] = 0.0;
            }
            for o in 0..n_out {
                let dl = ws.delta[o];
                if dl == 0.0 {
                    continue;
                }
                for (dn, wi) in ws.delta_next[..n_in].iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *dn += dl * wi;
                }
            }
            if l > 0 {
                // Through the tanh of the previous hidden layer.
                for i in 0..n_in {
                    let a = ws.acts[l][i];
                    ws.delta_next[i] *= 1.0 - a * a;
                }
            }
            core::mem::swap(&mut ws.delta, &mut ws.delta_next);
            off_end = off;
        }
        if let Some(g) = input_grad {
            // delta now holds ∂/∂(input) over [t̃, x]; drop the time slot.
            g[..d].copy_from_slice(&ws.delta[1..=d]);
        }
    }

    /// `∇_x S(t, x)` (row `i` = gradient of output `i`), via `d` reverse passes.
    pub fn input_jacobian(&self, ws: &mut Workspace, t: f64, x: &[f64]) -> Matrix {
        let d = self.dim();
        let mut out = vec![0.0; d];
        let mut jac = Matrix::zeros(d, d);
        let mut scratch = vec![0.0; self.params.len()];
        let mut e = vec![0.0; d];
        let mut row = vec![0.0; d];
        for i in 0..d {
            self.forward(ws, t, x, &mut out);
            e.iter_mut().for_each(|v| *v = 0.0);
            e[i] = 1.0;
            self.backward(ws, &e, &mut scratch, Some(&mut row));
            for j in 0..d {
                jac[(i, j)] = row[j];
            }
        }
        jac
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// The piecewise-in-time score model over a [`TimeSchedule`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    schedule: TimeSchedule,
    sigma: f64,
    /// One net per fine interval, in `schedule.intervals()` order.
    nets: Vec<TanhNet>,
}

impl ScoreModel {
    /// Every interval net zero: the model equals the stationary score.
    pub fn zeros(schedule: TimeSchedule, sigma: f64, d: usize) -> Self {
        let nets = schedule
            .intervals()
            .iter()
            .map(|&(k, j)| {
                let (a, b) = schedule.interval(k, j);
                TanhNet::zeros(d, *schedule.arch(k), a, b)
            })
            .collect();
        ScoreModel { schedule, sigma, nets }
    }

    pub fn from_nets(schedule: TimeSchedule, sigma: f64, nets: Vec<TanhNet>) -> Result<Self> {
        if nets.len() != schedule.total_intervals() {
            return Err(Error::SizeMismatch { left: nets.len(), right: schedule.total_intervals() });
        }
        Ok(ScoreModel { schedule, sigma, nets })
    }

    pub fn schedule(&self) -> &TimeSchedule {
        &self.schedule
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn nets(&self) -> &[TanhNet] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [TanhNet] {
        &mut self.nets
    }

    fn net_index(&self, t: f64) -> Result<usize> {
        let kj = self.schedule.locate(t)?;
        Ok(self.schedule.intervals().partition_point(|&p| p < kj))
    }

    pub fn net_at(&self, t: f64) -> Result<&TanhNet> {
        Ok(&self.nets[self.net_index(t)?])
    }

    /// `s(t, x) = −x/σ² + S_{k,j}(t, x)`.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.score_into(t, x, &mut out)?;
        Ok(out)
    }

    /// Reverse pass of [`evaluate`](Self::evaluate) against `upstream`:
    /// returns gradients w.r.t. the active net's parameters and w.r.t. `x`.
    pub fn backward(&self, t: f64, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let net = self.net_at(t)?;
        let mut ws = net.workspace();
        let mut out = vec![0.0; x.len()];
        net.forward(&mut ws, t, x, &mut out);
        let mut pg = vec![0.0; net.param_count()];
        let mut xg = vec![0.0; x.len()];
        net.backward(&mut ws, upstream, &mut pg, Some(&mut xg));
        let inv = 1.0 / (self.sigma * self.sigma);
        for (g, u) in xg.iter_mut().zip(upstream) {
            *g -= u * inv;
        }
        Ok((pg, xg))
    }

    /// Max over `probes` of `λ_max` of the symmetrized `∇_x S_{k,j}(t, ·)`.
    pub fn estimate_onesided_lipschitz(&self, t: f64, probes: &[Vec<f64>]) -> Result<f64> {
        if probes.is_empty() {
            return Err(Error::InvalidParams("at least one probe point is required"));
        }
        estimate_net_onesided_lipschitz(self.net_at(t)?, t, probes)
    }

    pub fn total_params(&self) -> usize {
        self.nets.iter().map(TanhNet::param_count).sum()
    }
}

/// Probe-set estimate of `sup_x λ_max(sym ∇_x S(t, x))` for a single net.
pub fn estimate_net_onesided_lipschitz(net: &TanhNet, t: f64, probes: &[Vec<f64>]) -> Result<f64> {
    let mut ws = net.workspace();
    let mut best = f64::NEG_INFINITY;
    for x in probes {
        let j = net.input_jacobian(&mut ws, t, x).symmetrized();
        let tol = 1e-10 * (1.0 + j.inf_norm());
        let lam = match linalg::lambda_max_symmetric(&j, tol) {
            Ok(l) => l,
            Err(Error::NoConvergence { estimate }) => estimate,
            Err(e) => return Err(e),
        };
        best = best.max(lam);
    }
    Ok(best)
}

struct NetSlice<'a> {
    net: &'a TanhNet,
    t: f64,
    inv_var: f64,
    ws: core::cell::RefCell<Workspace>,
}

impl ScoreSlice for NetSlice<'_> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let mut ws = self.ws.borrow_mut();
        self.net.forward(&mut ws, self.t, x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o -= xi * self.inv_var;
        }
    }
}

impl ScoreField for ScoreModel {
    fn dim(&self) -> usize {
        self.schedule.d
    }

    fn score_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let net = self.net_at(t)?;
        let mut ws = net.workspace();
        net.forward(&mut ws, t, x, out);
        let inv = 1.0 / (self.sigma * self.sigma);
        for (o, xi) in out.iter_mut().zip(x) {
            *o -= xi * inv;
        }
        Ok(())
    }

    fn at_time(&self, t: f64) -> Result<Box<dyn ScoreSlice + '_>> {
        let net = self.net_at(t)?;
        Ok(Box::new(NetSlice {
            net,
            t,
            inv_var: 1.0 / (self.sigma * self.sigma),
            ws: core::cell::RefCell::new(net.workspace()),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use crate::schedule::ScheduleParams;

    fn arch(depth: usize, width: usize) -> IntervalArch {
        IntervalArch { depth, width, weight_bound: 100.0, sup_cap: 3.0, lip_cap: 1.0 }
    }

    fn random_net(d: usize, depth: usize, width: usize, seed: u64) -> TanhNet {
        let mut rng = Rng::new(seed, 0);
        let mut net = TanhNet::init(d, arch(depth, width), 0.5, 1.0, &mut rng);
        // Randomize the read-out too so gradients are non-trivial.
        for p in net.params_mut() {
            *p += 0.5 * rng.gaussian();
        }
        net
    }

    fn eval_net(net: &TanhNet, t: f64, x: &[f64]) -> Vec<f64> {
        let mut ws = net.workspace();
        let mut out = vec![0.0; net.dim()];
        net.forward(&mut ws, t, x, &mut out);
        out
    }

    #[test]
    fn zero_network_gives_stationary_score() {
        let sched = crate::schedule::TimeSchedule::build(&ScheduleParams::new(1000, 1.0, 2)).unwrap();
        let model = ScoreModel::zeros(sched.clone(), 1.0, 2);
        let s = model.evaluate(sched.t_low() * 1.5, &[2.0, 0.0]).unwrap();
        assert_eq!(s, vec![-2.0, 0.0]);
        let model2 = ScoreModel::zeros(sched.clone(), 2.0, 2);
        assert_eq!(model2.evaluate(1.0, &[2.0, -4.0]).unwrap(), vec![-0.5, 1.0]);
        assert!(model.evaluate(sched.t_low() * 0.5, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn init_starts_at_zero_output() {
        let mut rng = Rng::new(3, 0);
        let net = TanhNet::init(3, arch(2, 8), 0.0, 1.0, &mut rng);
        assert!(net.params().iter().any(|p| *p != 0.0));
        assert_eq!(eval_net(&net, 0.3, &[1.0, -2.0, 0.5]), vec![0.0; 3]);
        let bound = 1.0 / (4.0f64).sqrt();
        assert!(net.params()[..4 * 8].iter().all(|p| p.abs() <= bound));
    }

    #[test]
    fn output_respects_sup_cap() {
        let mut net = random_net(3, 2, 10, 5);
        for p in net.params_mut() {
            *p *= 20.0;
        }
        let mut rng = Rng::new(6, 0);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| 10.0 * rng.gaussian()).collect();
            let t = 0.5 + 0.5 * rng.next_f64();
            assert!(eval_net(&net, t, &x).iter().all(|v| v.abs() <= 3.0));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = random_net(2, 2, 6, 7);
        let mut ws = net.workspace();
        let mut out = vec![0.0; 2];
        net.forward(&mut ws, 0.7, &[0.3, 0.1], &mut out);
        let mut pg = vec![0.0; net.param_count()];
        let mut xg = vec![1.0; 2];
        net.backward(&mut ws, &[0.0, 0.0], &mut pg, Some(&mut xg));
        assert!(pg.iter().all(|g| *g == 0.0));
        assert_eq!(xg, vec![0.0, 0.0]);
    }

    #[test]
    fn one_hidden_unit_matches_hand_chain_rule() {
        // d = 1, one hidden unit: S = V tanh((w2 tanh(a·t̃ + b·x + c) + e)/V).
        let (a, b, c, w2, e) = (0.3, -0.7, 0.2, 1.4, 0.1);
        let net = TanhNet::from_parts(
            vec![2, 1, 1],
            vec![a, b, c, w2, e],
            IntervalArch { depth: 1, width: 1, weight_bound: 10.0, sup_cap: 2.0, lip_cap: 1.0 },
            (0.0, 1.0),
            1.0,
        )
        .unwrap();
        let (t, x) = (0.25, 0.8);
        let h = (a * t + b * x + c).tanh();
        let y = w2 * h + e;
        let sq = 1.0 - (y / 2.0).tanh().powi(2);
        let want_out = 2.0 * (y / 2.0).tanh();
        let mut ws = net.workspace();
        let mut out = [0.0];
        net.forward(&mut ws, t, &[x], &mut out);
        assert!((out[0] - want_out).abs() < 1e-15);
        let mut pg = vec![0.0; 5];
        let mut xg = [0.0];
        net.backward(&mut ws, &[1.0], &mut pg, Some(&mut xg));
        let dh = 1.0 - h * h;
        let want = [sq * w2 * dh * t, sq * w2 * dh * x, sq * w2 * dh, sq * h, sq];
        for (g, w) in pg.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        assert!((xg[0] - sq * w2 * dh * b).abs() < 1e-15);
    }

    fn check_gradients(depth: usize, seed: u64) {
        let d = 3;
        let net = random_net(d, depth, 7, seed);
        let mut rng = Rng::new(seed, 1);
        let h = 1e-6;
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
            let t = 0.5 + 0.5 * rng.next_f64();
            let up: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
            let mut ws = net.workspace();
            let mut out = vec![0.0; d];
            net.forward(&mut ws, t, &x, &mut out);
            let mut pg = vec![0.0; net.param_count()];
            let mut xg = vec![0.0; d];
            net.backward(&mut ws, &up, &mut pg, Some(&mut xg));

            // parameter direction
            let dir: Vec<f64> = (0..net.param_count()).map(|_| rng.gaussian()).collect();
            let mut plus = net.clone();
            let mut minus = net.clone();
            for ((pp, pm), dv) in plus.params_mut().iter_mut().zip(minus.params_mut().iter_mut()).zip(&dir) {
                *pp += h * dv;
                *pm -= h * dv;
            }
            let fd = (math::dot(&up, &eval_net(&plus, t, &x)) - math::dot(&up, &eval_net(&minus, t, &x))) / (2.0 * h);
            let an = math::dot(&pg, &dir);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "param fd {fd} vs {an}");

            // input direction
            let xd: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
            let xp: Vec<f64> = x.iter().zip(&xd).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(&xd).map(|(a, b)| a - h * b).collect();
            let fdx = (math::dot(&up, &eval_net(&net, t, &xp)) - math::dot(&up, &eval_net(&net, t, &xm))) / (2.0 * h);
            let anx = math::dot(&xg, &xd);
            assert!((fdx - anx).abs() <= 1e-6 * anx.abs().max(1.0), "input fd {fdx} vs {anx}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_depths_1_to_3() {
        for depth in 1..=3 {
            check_gradients(depth, 10 + depth as u64);
        }
    }

    #[test]
    fn model_backward_includes_skip_term() {
        let sched = crate::schedule::TimeSchedule::build(&ScheduleParams::new(1000, 1.0, 2)).unwrap();
        let model = ScoreModel::zeros(sched, 2.0, 2);
        let (pg, xg) = model.backward(1.0, &[0.5, 0.5], &[1.0, -1.0]).unwrap();
        // Only the read-out biases see a gradient when every hidden unit is tanh(0) = 0.
        let nz = pg.iter().filter(|g| **g != 0.0).count();
        assert_eq!(nz, 2);
        assert_eq!(xg, vec![-0.25, 0.25]);
    }

    #[test]
    fn lipschitz_estimate_zero_and_linear() {
        let sched = crate::schedule::TimeSchedule::build(&ScheduleParams::new(1000, 1.0, 2)).unwrap();
        let model = ScoreModel::zeros(sched, 1.0, 2);
        let probes = vec![vec![0.0, 0.0], vec![1.0, -1.0]];
        assert_eq!(model.estimate_onesided_lipschitz(1.0, &probes).unwrap(), 0.0);

        // S(x) ≈ c·x: one hidden unit per coordinate with small input weight ε,
        // read-out c/ε, inside the linear regime of both tanh layers.
        let (c, eps) = (0.3, 1e-3);
        let d = 2;
        let mut params = vec![0.0; 3 * 2 + 2 + 2 * 2 + 2];
        // hidden layer: rows over [t̃, x0, x1]
        params[1] = eps;
        params[3 + 2] = eps;
        // read-out
        params[8] = c / eps;
        params[8 + 3] = c / eps;
        let net = TanhNet::from_parts(
            vec![d + 1, 2, d],
            params,
            IntervalArch { depth: 1, width: 2, weight_bound: 1e6, sup_cap: 50.0, lip_cap: 1.0 },
            (0.0, 1.0),
            1.0,
        )
        .unwrap();
        let est = estimate_net_onesided_lipschitz(&net, 0.5, &[vec![0.01, -0.02], vec![0.0, 0.0]]).unwrap();
        assert!((est - c).abs() < 0.05 * c, "estimate {est}");
    }

    #[test]
    fn gain_scales_output_and_jacobian() {
        let mut net = random_net(2, 2, 5, 21);
        let x = [0.4, -0.3];
        let before = eval_net(&net, 0.6, &x);
        let mut ws = net.workspace();
        let jb = net.input_jacobian(&mut ws, 0.6, &x);
        net.scale_output(0.5);
        let after = eval_net(&net, 0.6, &x);
        let ja = net.input_jacobian(&mut ws, 0.6, &x);
        for i in 0..2 {
            assert!((after[i] - 0.5 * before[i]).abs() < 1e-15);
            for j in 0..2 {
                assert!((ja[(i, j)] - 0.5 * jb[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn projection_clamps_weights() {
        let mut net = random_net(2, 1, 4, 2);
        for p in net.params_mut() {
            *p *= 1e4;
        }
        net.project_weights();
        assert!(net.params().iter().all(|p| p.abs() <= 100.0));
    }
}
