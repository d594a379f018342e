use proptest::prelude::*;

use scoregen::config::Config;
use scoregen::experiments::Setup;
use scoregen::parallel::{self, PATH_CHUNK};
use scoregen_core::oracle::OracleScore;
use scoregen_core::sampler::{self, DiffusionProfile, Integrator, SampleRun};
use scoregen_core::{trainer, ForwardSpec, MixtureTarget, Rng};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn parallel_integrate_matches_sequential(
        n_paths in 0usize..(3 * PATH_CHUNK),
        seed in any::<u64>(),
        threads in 1usize..5,
        exponential in any::<bool>(),
    ) {
        let target = MixtureTarget::symmetric_pair(2, 1.2, 0.4).unwrap();
        let spec = ForwardSpec::new(1.0).unwrap();
        let field = OracleScore::new(target, spec);
        let integrator = if exponential { Integrator::Exponential } else { Integrator::EulerMaruyama };
        let run = SampleRun::new(spec, 0.02, 4.0, DiffusionProfile::Ddpm, 20).unwrap().with_integrator(integrator);
        let rng = Rng::new(seed, 11);
        let seq = sampler::integrate_with_snapshots(&field, &run, n_paths, &rng, &[0, 7, 20]).unwrap();
        let par = parallel::with_threads(threads, || {
            parallel::integrate_with_snapshots(&field, &run, n_paths, &rng, &[0, 7, 20]).unwrap()
        });
        prop_assert_eq!(seq, par);
    }
}

#[test]
fn training_and_fisher_ignore_thread_count() {
    let mut cfg = Config::preset("smoke").unwrap();
    cfg.schedule.n = 256;
    cfg.train.iterations = 8;
    let setup = Setup::new(&cfg).unwrap();
    let (one, logs1) = parallel::with_threads(1, || setup.train().unwrap());
    let (three, logs3) = parallel::with_threads(3, || setup.train().unwrap());
    assert_eq!(one.nets(), three.nets());
    let losses = |logs: &[trainer::IntervalLog]| {
        logs.iter().flat_map(|l| l.records.iter().map(|r| r.dsm_loss)).collect::<Vec<_>>()
    };
    assert_eq!(losses(&logs1), losses(&logs3));

    let rng = Rng::new(5, 9);
    let f = |threads| {
        parallel::with_threads(threads, || {
            parallel::fisher_by_interval(&one, &setup.target, &setup.spec, &setup.schedule, 2, 32, &rng).unwrap()
        })
    };
    let seq = trainer::fisher_by_interval(&one, &setup.target, &setup.spec, &setup.schedule, 2, 32, &rng).unwrap();
    assert_eq!(f(1), f(4));
    assert_eq!(f(2), seq);
}
