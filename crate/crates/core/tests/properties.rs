use proptest::prelude::*;

use scoregen_core::metrics::{w1_exact, w1_sorted_1d};
use scoregen_core::oracle::{self, OracleScore};
use scoregen_core::sampler::{advance_chunk, initial_states, integrate, DiffusionProfile, SampleRun};
use scoregen_core::schedule::ScheduleParams;
use scoregen_core::{ForwardSpec, Matrix, MixtureTarget, Rng, TimeSchedule};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

// Heap's algorithm over every permutation.
fn brute_force_w1(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let n = xs.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| dist(&xs[i], &ys[j])).sum::<f64>();
    let mut best = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

fn cloud(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), n)
}

fn pair_of_clouds() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..=6, 1usize..=3).prop_flat_map(|(n, d)| (cloud(n, d), cloud(n, d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_w1_matches_permutation_search((xs, ys) in pair_of_clouds()) {
        let fast = w1_exact(&xs, &ys).unwrap();
        let slow = brute_force_w1(&xs, &ys);
        prop_assert!((fast - slow).abs() <= 1e-9 * (1.0 + slow), "{fast} vs {slow}");
    }

    #[test]
    fn exact_w1_is_symmetric((xs, ys) in pair_of_clouds()) {
        let a = w1_exact(&xs, &ys).unwrap();
        let b = w1_exact(&ys, &xs).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn sorted_matches_exact_on_the_line(xs in cloud(7, 1), ys in cloud(7, 1)) {
        let mut a: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        let mut b: Vec<f64> = ys.iter().map(|y| y[0]).collect();
        let sorted = w1_sorted_1d(&mut a, &mut b).unwrap();
        let exact = w1_exact(&xs, &ys).unwrap();
        prop_assert!((sorted - exact).abs() <= 1e-9);
    }

    #[test]
    fn rng_streams_replay(seed in any::<u64>(), stream in any::<u64>(), skip in 0usize..9) {
        let mut a = Rng::new(seed, stream);
        let mut b = Rng::new(seed, stream);
        for _ in 0..skip {
            a.next_u32();
            b.next_u32();
        }
        let sa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let sb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        prop_assert_eq!(&sa, &sb);
        let mut c = Rng::new(seed, stream).substream(1);
        let sc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        prop_assert_ne!(sa, sc);
    }

    #[test]
    fn uniform_draws_stay_in_unit_interval(seed in any::<u64>()) {
        let mut r = Rng::new(seed, 3);
        for _ in 0..256 {
            let u = r.next_f64();
            prop_assert!((0.0..1.0).contains(&u));
            let v = r.next_f64_open0();
            prop_assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn schedule_tiles_horizon(log2n in 6u32..14, d in 1usize..5) {
        let n = 1usize << log2n;
        let s = TimeSchedule::build(&ScheduleParams::new(n, 1.0, d)).unwrap();
        let ivs = s.intervals();
        prop_assert!(!ivs.is_empty());
        let (k0, j0) = ivs[0];
        prop_assert!((s.interval(k0, j0).0 - s.t_low()).abs() <= 1e-12 * s.t_low());
        let (kl, jl) = *ivs.last().unwrap();
        prop_assert!(s.interval(kl, jl).1 >= s.t_high() * (1.0 - 1e-12));
        for w in ivs.windows(2) {
            let (a, b) = (s.interval(w[0].0, w[0].1), s.interval(w[1].0, w[1].1));
            prop_assert!(a.0 < a.1);
            prop_assert!((a.1 - b.0).abs() <= 1e-12 * b.0);
        }
        for &(k, j) in ivs {
            let (lo, hi) = s.interval(k, j);
            let mid = 0.5 * (lo + hi);
            if mid <= s.t_high() {
                prop_assert_eq!(s.locate(mid).unwrap(), (k, j));
            }
        }
    }

    #[test]
    fn gaussian_score_matches_closed_form(
        m0 in -2.0..2.0f64, m1 in -2.0..2.0f64,
        a in 0.3..2.0f64, b in 0.3..2.0f64, rho in -0.8..0.8f64,
        sigma in 0.5..2.0f64, t in 0.01..5.0f64,
        x0 in -3.0..3.0f64, x1 in -3.0..3.0f64,
    ) {
        let c01 = rho * (a * b).sqrt();
        let cov = Matrix::from_rows(&[vec![a, c01], vec![c01, b]]);
        let target = MixtureTarget::gaussian(vec![m0, m1], cov).unwrap();
        let spec = ForwardSpec::new(sigma).unwrap();
        let e = (-t).exp();
        let st2 = sigma * sigma * (1.0 - (-2.0 * t).exp());
        let (p, q, r) = (e * e * a + st2, e * e * c01, e * e * b + st2);
        let det = p * r - q * q;
        let (u, v) = (x0 - e * m0, x1 - e * m1);
        let want = [-(r * u - q * v) / det, -(-q * u + p * v) / det];
        let got = oracle::score(&target, &spec, t, &[x0, x1]).unwrap();
        for i in 0..2 {
            prop_assert!((got[i] - want[i]).abs() <= 1e-9 * (1.0 + want[i].abs()));
        }
    }

    #[test]
    fn chunking_does_not_change_paths(split in 1usize..16, seed in any::<u64>()) {
        let target = MixtureTarget::symmetric_pair(2, 1.0, 0.5).unwrap();
        let spec = ForwardSpec::new(1.0).unwrap();
        let field = OracleScore::new(target, spec);
        let run = SampleRun::new(spec, 0.01, 3.0, DiffusionProfile::Ddpm, 12).unwrap();
        let rng = Rng::new(seed, 0);
        let whole = integrate(&field, &run, 16, &rng).unwrap();
        let times = run.step_times();
        let (mut xs, mut rngs) = initial_states(&run, 2, 16, &rng);
        for step in 0..run.n_steps {
            let (xa, xb) = xs.split_at_mut(split);
            let (ra, rb) = rngs.split_at_mut(split);
            advance_chunk(&field, &run, &times, step, xa, ra).unwrap();
            advance_chunk(&field, &run, &times, step, xb, rb).unwrap();
        }
        prop_assert_eq!(whole, xs);
    }
}
