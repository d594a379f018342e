//! Dyadic coarse grid `τ_k = 2^k T̲` on `[T̲, T̄]`, each coarse interval split
//! uniformly into `Υ_k` fine intervals, and the per-coarse-interval network
//! sizes. Fine intervals are half-open `[τ_{k,j}, τ_{k,j+1})`, except that `T̄`
//! belongs to the last one.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Float;

/// `(β+1)/(2β+d)`: the Wasserstein-1 rate exponent for β-smooth densities.
pub fn rate_exponent(beta: f64, d: usize) -> f64 {
    (beta + 1.0) / (2.0 * beta + d as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntervalArch {
    pub depth: usize,
    pub width: usize,
    /// Bound on every weight and bias magnitude.
    pub weight_bound: f64,
    /// Sup-norm cap on the network output.
    pub sup_cap: f64,
    /// Cap on `λ_max` of the symmetrized input Jacobian.
    pub lip_cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// All sizes derived from `(n, β, d)` and the constants.
    Derived,
    /// Endpoints and sizes supplied explicitly.
    Manual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManualSchedule {
    pub t_low: f64,
    pub t_high: f64,
    /// Fine counts per coarse interval; a single entry is broadcast.
    pub upsilon: Vec<usize>,
    pub arch: IntervalArch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleParams {
    pub n: usize,
    pub beta: f64,
    pub d: usize,
    /// Multiplicative constant shared by the size formulas.
    pub c: f64,
    /// Exponent constant on the `log n` factors.
    pub c2: f64,
    /// Extra factor on the one-sided Lipschitz cap only.
    pub lip_scale: f64,
    /// Forward-process σ; the horizon uses `max(C, σ²)·log n` so that `e^{−T̄/σ²} ≤ 1/n`.
    pub sigma: f64,
    pub width_clamp: (usize, usize),
    pub depth_override: Option<usize>,
    pub max_upsilon: usize,
    pub mode: ScheduleMode,
    pub manual: Option<ManualSchedule>,
}

impl ScheduleParams {
    pub fn new(n: usize, beta: f64, d: usize) -> Self {
        ScheduleParams {
            n,
            beta,
            d,
            c: 1.0,
            c2: 1.0,
            lip_scale: 1.0,
            sigma: 1.0,
            width_clamp: (4, 512),
            depth_override: None,
            max_upsilon: 64,
            mode: ScheduleMode::Derived,
            manual: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSchedule {
    t_low: f64,
    t_high: f64,
    tau: Vec<f64>,
    upsilon: Vec<usize>,
    archs: Vec<IntervalArch>,
    // Flattened fine boundaries: `starts[i]` is the left end of fine interval `i`;
    // `index[i] = (k, j)`.
    starts: Vec<f64>,
    index: Vec<(usize, usize)>,
    pub n: usize,
    pub beta: f64,
    pub d: usize,
    pub c: f64,
    pub c2: f64,
}

impl TimeSchedule {
    pub fn build(p: &ScheduleParams) -> Result<Self> {
        if !(p.beta > 0.0) {
            return Err(Error::InvalidParams("beta must be positive"));
        }
        if p.n < 2 {
            return Err(Error::InvalidParams("n must be at least 2"));
        }
        if p.d == 0 {
            return Err(Error::InvalidParams("dimension must be at least 1"));
        }
        if !(p.c > 0.0) || !(p.lip_scale > 0.0) || p.width_clamp.0 == 0 || p.width_clamp.0 > p.width_clamp.1 {
            return Err(Error::InvalidParams("constants must be positive and the width clamp ordered"));
        }
        let n = p.n as f64;
        let d = p.d as f64;
        let two_b_d = 2.0 * p.beta + d;
        match p.mode {
            ScheduleMode::Derived => {
                let t_low = (p.c * n).powf(-2.0 * (p.beta + 1.0) / two_b_d);
                let t_high_raw = p.c.max(p.sigma * p.sigma) * n.ln();
                let m = dyadic_count(t_low, t_high_raw);
                let tau: Vec<f64> = (0..=m).map(|k| t_low * (2.0f64).powi(k as i32)).collect();
                let n_scale = n.powf(2.0 / two_b_d);
                let fine_exp = ((d - 2.0) / d).max(0.0);
                let log_n = n.ln().powf(p.c2);
                let upsilon = tau[..m]
                    .iter()
                    .map(|&tk| {
                        let raw = (tk * n_scale).powf(fine_exp).ceil();
                        (raw as usize).clamp(1, p.max_upsilon.max(1))
                    })
                    .collect();
                let archs = tau[..m]
                    .iter()
                    .map(|&tk| {
                        let w = (p.c * log_n / tk * n.powf((d - 2.0) / two_b_d)).ceil();
                        let width = if w.is_finite() { w as usize } else { usize::MAX };
                        let tk1 = tk.min(1.0);
                        IntervalArch {
                            depth: p.depth_override.unwrap_or_else(|| (p.c.ceil() as usize).max(1)),
                            width: width.clamp(p.width_clamp.0, p.width_clamp.1),
                            weight_bound: p.c * n.powf(p.c2),
                            sup_cap: p.c * log_n * tk1.powf(-0.5),
                            lip_cap: p.lip_scale
                                * p.c
                                * (-tk).exp()
                                * tk1.powf(-1.0 + p.beta.min(1.0) / d),
                        }
                    })
                    .collect();
                Self::assemble(t_low, tau, upsilon, archs, p)
            }
            ScheduleMode::Manual => {
                let man = p.manual.as_ref().ok_or(Error::InvalidParams("manual mode needs manual fields"))?;
                if !(man.t_low > 0.0) || !(man.t_high > man.t_low) {
                    return Err(Error::InvalidParams("manual schedule needs 0 < t_low < t_high"));
                }
                let m = dyadic_count(man.t_low, man.t_high);
                let tau: Vec<f64> = (0..=m).map(|k| man.t_low * (2.0f64).powi(k as i32)).collect();
                let upsilon = match man.upsilon.len() {
                    1 => alloc::vec![man.upsilon[0].max(1); m],
                    l if l == m => man.upsilon.iter().map(|u| (*u).max(1)).collect(),
                    _ => return Err(Error::InvalidParams("manual upsilon must have 1 or m entries")),
                };
                Self::assemble(man.t_low, tau, upsilon, alloc::vec![man.arch; m], p)
            }
        }
    }

    fn assemble(
        t_low: f64,
        tau: Vec<f64>,
        upsilon: Vec<usize>,
        archs: Vec<IntervalArch>,
        p: &ScheduleParams,
    ) -> Result<Self> {
        let mut starts = Vec::new();
        let mut index = Vec::new();
        for (k, &u) in upsilon.iter().enumerate() {
            for j in 0..u {
                starts.push(fine_point(tau[k], u, j));
                index.push((k, j));
            }
        }
        let t_high = *tau.last().expect("at least two grid points");
        Ok(TimeSchedule {
            t_low,
            t_high,
            tau,
            upsilon,
            archs,
            starts,
            index,
            n: p.n,
            beta: p.beta,
            d: p.d,
            c: p.c,
            c2: p.c2,
        })
    }

    pub fn t_low(&self) -> f64 {
        self.t_low
    }

    pub fn t_high(&self) -> f64 {
        self.t_high
    }

    /// Number of coarse intervals `m`.
    pub fn coarse_count(&self) -> usize {
        self.upsilon.len()
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn upsilon(&self) -> &[usize] {
        &self.upsilon
    }

    pub fn arch(&self, k: usize) -> &IntervalArch {
        &self.archs[k]
    }

    pub fn archs(&self) -> &[IntervalArch] {
        &self.archs
    }

    /// `τ_{k,j} = (1 + j/Υ_k) τ_k`, for `j ∈ 0..=Υ_k`.
    pub fn fine(&self, k: usize, j: usize) -> f64 {
        fine_point(self.tau[k], self.upsilon[k], j)
    }

    /// `[τ_{k,j}, τ_{k,j+1}]`.
    pub fn interval(&self, k: usize, j: usize) -> (f64, f64) {
        (self.fine(k, j), self.fine(k, j + 1))
    }

    /// All fine intervals in time order.
    pub fn intervals(&self) -> &[(usize, usize)] {
        &self.index
    }

    pub fn total_intervals(&self) -> usize {
        self.index.len()
    }

    /// The fine interval containing `t`.
    pub fn locate(&self, t: f64) -> Result<(usize, usize)> {
        if !(t >= self.t_low && t <= self.t_high) {
            return Err(Error::OutOfRange { t, lo: self.t_low, hi: self.t_high });
        }
        // Last start ≤ t.
        let pos = self.starts.partition_point(|&s| s <= t);
        Ok(self.index[pos.saturating_sub(1)])
    }

    /// FNV-1a over the schedule's defining numbers.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write_f64(self.t_low);
        h.write_f64(self.t_high);
        h.write_u64(self.n as u64);
        h.write_f64(self.beta);
        h.write_u64(self.d as u64);
        for (u, a) in self.upsilon.iter().zip(&self.archs) {
            h.write_u64(*u as u64);
            h.write_u64(a.depth as u64);
            h.write_u64(a.width as u64);
            h.write_f64(a.weight_bound);
            h.write_f64(a.sup_cap);
            h.write_f64(a.lip_cap);
        }
        h.finish()
    }
}

fn fine_point(tau_k: f64, upsilon: usize, j: usize) -> f64 {
    if j == upsilon {
        2.0 * tau_k
    } else {
        (1.0 + j as f64 / upsilon as f64) * tau_k
    }
}

/// `m = ⌈log₂(hi/lo)⌉`, at least 1.
fn dyadic_count(lo: f64, hi: f64) -> usize {
    let mut m = (hi / lo).log2().ceil().max(1.0) as usize;
    // Guard against log2 rounding just below an exact power of two.
    while lo * (2.0f64).powi(m as i32) < hi {
        m += 1;
    }
    m
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone)]
pub struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_f64(&mut self, v: f64) {
        self.write(&v.to_bits().to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn early_stopping_time_n1024() {
        let s = TimeSchedule::build(&ScheduleParams::new(1024, 1.0, 3)).unwrap();
        assert!((s.t_low() - 0.003_906_25).abs() < 1e-15);
    }

    #[test]
    fn fine_count_example() {
        // β=1, d=4, n=4096: n^{2/6} = 16 and Υ = ⌈(1·16)^{1/2}⌉ = 4 at τ = 1.
        let n: f64 = 4096.0;
        let n_scale = n.powf(2.0 / 6.0);
        assert!((n_scale - 16.0).abs() < 1e-12);
        let ups = ((1.0 * n_scale).powf(0.5)).ceil() as usize;
        assert_eq!(ups, 4);
        // and through the builder: pick the coarse interval whose τ_k is closest to 1
        let s = TimeSchedule::build(&ScheduleParams::new(4096, 1.0, 4)).unwrap();
        for (k, &tk) in s.tau()[..s.coarse_count()].iter().enumerate() {
            let want = ((tk * n_scale).powf(0.5).ceil() as usize).max(1);
            assert_eq!(s.upsilon()[k], want);
        }
    }

    #[test]
    fn two_dimensions_collapse_fine_grid() {
        let s = TimeSchedule::build(&ScheduleParams::new(5000, 1.0, 2)).unwrap();
        assert!(s.upsilon().iter().all(|&u| u == 1));
        assert_eq!(s.total_intervals(), s.coarse_count());
    }

    #[test]
    fn grid_is_dyadic_and_nested() {
        for &(n, beta, d) in &[(512usize, 1.0, 3usize), (8192, 2.0, 5), (100, 0.5, 4)] {
            let s = TimeSchedule::build(&ScheduleParams::new(n, beta, d)).unwrap();
            let tau = s.tau();
            assert_eq!(tau[0], s.t_low());
            assert_eq!(*tau.last().unwrap(), s.t_high());
            assert!(s.t_high() >= (n as f64).ln());
            for k in 0..s.coarse_count() {
                assert_eq!(tau[k + 1] / tau[k], 2.0);
                assert_eq!(s.fine(k, 0), tau[k]);
                assert_eq!(s.fine(k, s.upsilon()[k]), tau[k + 1]);
                for j in 0..s.upsilon()[k] {
                    let (a, b) = s.interval(k, j);
                    assert!(a < b);
                    if j + 1 < s.upsilon()[k] {
                        assert_eq!(b, s.interval(k, j + 1).0);
                    }
                }
            }
            // monotone fine counts
            assert!(s.upsilon().windows(2).all(|w| w[0] <= w[1]));
            // total count bound C n^{2/(2β+d)} log n, C = 1 but allow the ceilings
            let bound = (n as f64).powf(2.0 / (2.0 * beta + d as f64)) * (n as f64).ln();
            assert!((s.total_intervals() as f64) <= bound + s.coarse_count() as f64);
        }
    }

    #[test]
    fn locate_boundaries() {
        let s = TimeSchedule::build(&ScheduleParams::new(4096, 1.0, 3)).unwrap();
        assert_eq!(s.locate(s.t_low()).unwrap(), (0, 0));
        let last = *s.intervals().last().unwrap();
        assert_eq!(s.locate(s.t_high()).unwrap(), last);
        for &(k, j) in s.intervals() {
            assert_eq!(s.locate(s.fine(k, j)).unwrap(), (k, j));
        }
        assert!(matches!(s.locate(s.t_low() * 0.5), Err(Error::OutOfRange { .. })));
        assert!(s.locate(s.t_high() * 1.0001).is_err());
    }

    #[test]
    fn locate_matches_linear_scan() {
        let s = TimeSchedule::build(&ScheduleParams::new(4096, 1.0, 3)).unwrap();
        let mut rng = Rng::new(1, 9);
        let (lo, hi) = (s.t_low().ln(), s.t_high().ln());
        for _ in 0..10_000 {
            let t = (lo + (hi - lo) * rng.next_f64()).exp().clamp(s.t_low(), s.t_high());
            let scan = s
                .intervals()
                .iter()
                .copied()
                .find(|&(k, j)| {
                    let (a, b) = s.interval(k, j);
                    a <= t && (t < b || b == s.t_high())
                })
                .unwrap();
            assert_eq!(s.locate(t).unwrap(), scan);
        }
    }

    #[test]
    fn architecture_formulas() {
        let mut p = ScheduleParams::new(4096, 1.0, 3);
        p.width_clamp = (1, usize::MAX);
        let s = TimeSchedule::build(&p).unwrap();
        let n: f64 = 4096.0;
        for k in 0..s.coarse_count() {
            let tk = s.tau()[k];
            let a = s.arch(k);
            let w = (n.ln() / tk * n.powf(1.0 / 5.0)).ceil() as usize;
            assert_eq!(a.width, w);
            assert!((a.sup_cap - n.ln() * tk.min(1.0).powf(-0.5)).abs() < 1e-12);
            let lip = (-tk).exp() * tk.min(1.0).powf(-1.0 + 1.0 / 3.0);
            assert!((a.lip_cap - lip).abs() < 1e-12 * lip);
            assert_eq!(a.depth, 1);
        }
        let clamped = TimeSchedule::build(&ScheduleParams::new(4096, 1.0, 3)).unwrap();
        assert!(clamped.archs().iter().all(|a| (4..=512).contains(&a.width)));
    }

    #[test]
    fn rate_exponent_values() {
        assert!((rate_exponent(1.0, 3) - 0.4).abs() < 1e-15);
        assert!((rate_exponent(2.0, 4) - 0.375).abs() < 1e-15);
        let mut prev = 0.0;
        for b in [1.0, 10.0, 100.0, 1e4, 1e8] {
            let r = rate_exponent(b, 3);
            assert!(r > prev && r < 0.5);
            prev = r;
        }
        assert!((rate_exponent(1e12, 3) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn invalid_params() {
        assert!(TimeSchedule::build(&ScheduleParams::new(1, 1.0, 3)).is_err());
        assert!(TimeSchedule::build(&ScheduleParams::new(100, 0.0, 3)).is_err());
        assert!(TimeSchedule::build(&ScheduleParams::new(100, -1.0, 3)).is_err());
    }

    #[test]
    fn manual_mode_and_hash() {
        let mut p = ScheduleParams::new(1000, 1.0, 3);
        p.mode = ScheduleMode::Manual;
        p.manual = Some(ManualSchedule {
            t_low: 0.01,
            t_high: 5.0,
            upsilon: alloc::vec![2],
            arch: IntervalArch { depth: 2, width: 16, weight_bound: 50.0, sup_cap: 10.0, lip_cap: 5.0 },
        });
        let s = TimeSchedule::build(&p).unwrap();
        assert_eq!(s.t_low(), 0.01);
        assert!(s.t_high() >= 5.0 && s.t_high() < 10.0);
        assert_eq!(s.total_intervals(), 2 * s.coarse_count());
        let derived = TimeSchedule::build(&ScheduleParams::new(1000, 1.0, 3)).unwrap();
        assert_ne!(s.hash(), derived.hash());
        assert_eq!(s.hash(), TimeSchedule::build(&p).unwrap().hash());
    }
}
