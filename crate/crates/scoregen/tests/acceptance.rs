//! Ten end-to-end criteria, one `PASS`/`FAIL` line each. Runs without the
//! libtest harness so the lines are never captured. The process reports and
//! exits 0; set `ACCEPTANCE_STRICT=1` to exit nonzero when a criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use scoregen::config::Config;
use scoregen::experiments::{self, run_pipeline, Setup};
use scoregen::parallel;
use scoregen::suites::{self, Scale};
use scoregen_core::metrics::{mean_and_se, w1_exact, w1_sliced};
use scoregen_core::verify::CheckReport;
use scoregen_core::Rng;

const SEED: u64 = 0;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn failed_cases(reports: &[CheckReport]) -> Vec<String> {
    reports.iter().filter(|r| !r.pass).map(|r| format!("{}:{}", r.check, r.case)).collect()
}

fn min_slack(reports: &[CheckReport]) -> f64 {
    reports.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min)
}

fn finite_differences() -> Outcome {
    let start = Instant::now();
    let fd = suites::finite_difference_suite(500, SEED).expect("fd suite runs");
    let secs = start.elapsed().as_secs_f64();
    outcome(
        fd.max_score_rel_error <= 1e-5 && fd.max_jacobian_error <= 1e-5 && secs <= 60.0,
        format!(
            "{} cases, score rel err {:.2e}, jacobian err {:.2e} (tol 1e-5), {secs:.1}s (limit 60s)",
            fd.cases, fd.max_score_rel_error, fd.max_jacobian_error
        ),
    )
}

fn stationary() -> Outcome {
    let s = suites::stationary_suite(SEED).expect("stationary suite runs");
    outcome(
        s.pass,
        format!(
            "score deviation {:.1e}, zero-model fisher {:.1e}, one-sided excess {:.1e} (tol 1e-12)",
            s.max_score_deviation, s.zero_model_fisher, s.max_onesided_excess
        ),
    )
}

fn denoising() -> Outcome {
    let start = Instant::now();
    let reports = suites::denoising(&Scale::full(), SEED).expect("denoising suite runs");
    let secs = start.elapsed().as_secs_f64();
    let bad = failed_cases(&reports);
    let worst = reports.iter().map(|r| r.lhs / r.rhs).fold(0.0, f64::max);
    outcome(
        bad.is_empty() && reports.len() == 9 && secs <= 120.0,
        format!("{} cases at 1e5 draws, worst |gap|/3SE {worst:.2}, {secs:.1}s (limit 120s), failed {bad:?}", reports.len()),
    )
}

fn reversal() -> Outcome {
    let reports = suites::reversal(&Scale::full(), SEED).expect("reversal suite runs");
    let moments = reports.iter().filter(|r| r.check == "moments").count();
    let agreement: Vec<_> = reports.iter().filter(|r| r.check == "profile_agreement").collect();
    let worst = agreement.iter().map(|r| r.lhs / r.rhs).fold(0.0, f64::max);
    let bad = failed_cases(&reports);
    outcome(
        bad.is_empty() && moments == 15 && agreement.len() == 3,
        format!(
            "{moments} moment checks within 3SE (1e5 paths, 2048 steps), ode/ddpm W1 worst ratio to tolerance {worst:.2}, failed {bad:?}"
        ),
    )
}

fn stability() -> Outcome {
    let reports = suites::stability(&Scale::full(), SEED).expect("stability suite runs");
    let bad = failed_cases(&reports);
    let slack = min_slack(&reports);
    let linear = reports.iter().find(|r| r.case.starts_with("linear")).expect("linear case present");
    let err = linear.details["analytic_error"];
    let allow = linear.details["analytic_allowance"];
    outcome(
        bad.is_empty() && slack >= 1.0 && err <= allow,
        format!(
            "{} checks, min slack {slack:.2} (need >= 1), linear gap {:.5} vs closed form {:.5}, error {err:.1e} <= {allow:.1e}, failed {bad:?}",
            reports.len(),
            linear.lhs,
            linear.details["analytic_gap"]
        ),
    )
}

fn envelope() -> Outcome {
    let setup = Setup::new(&Config::preset("benchmark").unwrap()).expect("benchmark setup");
    let (lo, hi) = (setup.schedule.t_low(), setup.schedule.t_high());
    let e = suites::envelope_suite(lo, hi, 33).expect("envelope suite runs");
    outcome(
        e.pass,
        format!(
            "[{lo:.4}, {hi:.2}], C {:.3}, dominated on refined grid {}, sup at t=10 {:.1e} (tol 1e-6), integral change {:.2}% (tol 5%)",
            e.fit.fitted_constant,
            e.refined.dominated,
            e.sup_at_t10,
            100.0 * e.integral_relative_change
        ),
    )
}

fn training() -> Outcome {
    let start = Instant::now();
    let cfg = Config::preset("benchmark").unwrap();
    let out = run_pipeline(&cfg, None).expect("benchmark pipeline runs");
    let secs = start.elapsed().as_secs_f64();
    let setup = Setup::new(&cfg).unwrap();
    let tau = setup.schedule.tau();
    let m = &out.result.metrics;
    let early: Vec<_> = m.fisher_intervals.iter().filter(|f| tau[f.k] <= 2.0).collect();
    let losing: Vec<(usize, usize)> =
        early.iter().filter(|f| f.model >= f.baseline.expect("baseline on") || f.model.is_nan()).map(|f| (f.k, f.j)).collect();
    let w1_base = m.w1_baseline.as_ref().expect("baseline on").value;
    outcome(
        losing.is_empty() && !early.is_empty() && m.w1.value < w1_base && secs <= 1800.0,
        format!(
            "{} intervals with tau_k <= 2, {} not below baseline {losing:?}; W1 {:.4} vs baseline {w1_base:.4}; {secs:.0}s (limit 1800s)",
            early.len(),
            losing.len(),
            m.w1.value
        ),
    )
}

fn rate() -> Outcome {
    let cfg = Config::preset("benchmark").unwrap();
    let s = experiments::rate_sweep(&cfg, None).expect("sweep runs");
    let medians: Vec<String> = s.points.iter().map(|p| format!("{}:{:.4}", p.n, p.median_w1)).collect();
    outcome(
        s.monotone && s.slope_negative,
        format!(
            "medians [{}], {} inversion(s) (max 1), slope {:.3} CI [{:.3}, {:.3}] (must exclude 0, negative), theoretical {:.3}",
            medians.join(", "),
            s.inversions,
            s.slope,
            s.slope_ci[0],
            s.slope_ci[1],
            s.theoretical_exponent
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = Config::preset("smoke").unwrap();
    let run = |threads| {
        parallel::with_threads(threads, || {
            let dir = tempfile::tempdir().unwrap();
            let o = run_pipeline(&cfg, Some(dir.path())).expect("smoke pipeline runs");
            let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
            let losses: Vec<u64> =
                o.logs.iter().flat_map(|l| l.records.iter().map(|r| r.dsm_loss.to_bits())).collect();
            (read("model.ckpt"), read("samples.bin"), read("metrics.json"), read("config.snapshot"), losses)
        })
    };
    let one = run(1);
    let four = run(4);
    let again = run(1);
    let same = one == four && one == again;
    outcome(
        same,
        format!(
            "smoke pipeline at 1, 4, 1 threads: checkpoint, samples, metrics, snapshot and loss curves {}",
            if same { "bitwise identical" } else { "differ" }
        ),
    )
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

fn permutation_w1(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    fn go(i: usize, used: &mut [bool], acc: f64, best: &mut f64, xs: &[Vec<f64>], ys: &[Vec<f64>]) {
        if i == xs.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..ys.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, used, acc + dist(&xs[i], &ys[j]), best, xs, ys);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, &mut vec![false; xs.len()], 0.0, &mut best, xs, ys);
    best / xs.len() as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = Rng::new(SEED, 0xacce);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = 1 + rng.below(7);
        let d = 1 + rng.below(3);
        let mut cloud = || (0..n).map(|_| (0..d).map(|_| 4.0 * rng.next_f64() - 2.0).collect()).collect::<Vec<Vec<f64>>>();
        let (xs, ys) = (cloud(), cloud());
        worst = worst.max((w1_exact(&xs, &ys).unwrap() - permutation_w1(&xs, &ys)).abs());
    }
    let (s1, s2) = (1.0f64, 2.0f64);
    let expected = (s1 - s2).abs() * (2.0 / std::f64::consts::PI).sqrt();
    let reps: Vec<f64> = (0..20)
        .map(|r| {
            let mut g = Rng::new(SEED, 0x5eed).substream(r);
            let xs: Vec<Vec<f64>> = (0..100_000).map(|_| vec![s1 * g.gaussian()]).collect();
            let ys: Vec<Vec<f64>> = (0..100_000).map(|_| vec![s2 * g.gaussian()]).collect();
            w1_sliced(&xs, &ys, 1, &mut g).unwrap().value
        })
        .collect();
    let (est, se) = mean_and_se(&reps);
    let ok_exact = worst <= 1e-12;
    let ok_sliced = (est - expected).abs() <= 3.0 * se;
    outcome(
        ok_exact && ok_sliced,
        format!(
            "50 instances n<=7, max |exact - permutation| {worst:.1e} (tol 1e-12); 1-D sliced {est:.5} vs {expected:.5}, |diff| {:.1e} <= 3SE {:.1e} (20 reps of 1e5)",
            (est - expected).abs(),
            3.0 * se
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("oracle finite differences", finite_differences),
        ("stationary exactness", stationary),
        ("denoising score trick", denoising),
        ("marginal reversal", reversal),
        ("stability bounds", stability),
        ("one-sided lipschitz envelope", envelope),
        ("training beats baseline", training),
        ("rate behaviour", rate),
        ("determinism", determinism),
        ("metric oracles", metric_oracles),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|p| p == &id.to_string() || name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        ran += 1;
        if !o.pass {
            failed.push(id);
        }
        println!(
            "criterion {id:>2} {name:<30} {} [{:.1}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {}/{ran} criteria pass, failed {failed:?}", ran - failed.len());
    if failed.is_empty() || std::env::var_os("ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
