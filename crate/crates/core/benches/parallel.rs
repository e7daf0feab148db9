use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use netobs::estimate::{cdossp_step, CovarianceState, EstimationSetup};
use netobs::exec::Execution;
use netobs::sim::{run_estimators, SimConfig};
use netobs::synth::{self, corpus, SizeSpec, VERIFICATION_MIX};
use netobs::verify::{verify_many, Property};
use netobs::Tolerances;

const MODES: [(&str, Execution); 2] = [("serial", Execution::Serial), ("parallel", Execution::Parallel)];

fn monte_carlo(c: &mut Criterion) {
    let mut rng = synth::rng(2024);
    let sys = synth::coupled_estimation_system(&mut rng, 4);
    let setup = EstimationSetup::new(&sys, &Tolerances::default()).unwrap();
    let mut g = c.benchmark_group("monte_carlo_2000x20");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = SimConfig { trials: 2000, horizon: 20, exec, ..Default::default() };
        g.bench_function(name, |b| b.iter(|| run_estimators(&setup, &cfg).unwrap()));
    }
    g.finish();
}

fn verification(c: &mut Criterion) {
    let tol = Tolerances::default();
    let systems: Vec<_> = corpus(7, 200, &VERIFICATION_MIX, &SizeSpec::default(), &tol).into_iter().map(|(_, s)| s).collect();
    let mut g = c.benchmark_group("verify_observability_200");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| verify_many(&systems, Property::Observable, &tol, exec)));
    }
    g.finish();
}

fn covariance_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("cdossp_step");
    for n in [4usize, 16] {
        let mut rng = synth::rng(n as u64);
        let sys = synth::coupled_estimation_system(&mut rng, n);
        for (name, exec) in MODES {
            let setup = EstimationSetup::new(&sys, &Tolerances::default()).unwrap().with_execution(exec);
            let p = CovarianceState::identity(setup.states());
            g.bench_with_input(BenchmarkId::new(name, n), &p, |b, p| b.iter(|| cdossp_step(&setup, p).unwrap()));
        }
    }
    g.finish();
}

criterion_group!(benches, monte_carlo, verification, covariance_step);
criterion_main!(benches);
