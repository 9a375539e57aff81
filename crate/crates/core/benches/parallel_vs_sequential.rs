use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use netjump::designer::{synthesize, CovarianceTuple, JumpOperator, Strategy, SynthesisOptions};
use netjump::exec::Execution;
use netjump::model::build_augmented;
use netjump::outcome_chain::OutcomeChain;
use netjump::reference;
use netjump::simulator::{monte_carlo, MonteCarloOptions};

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_monte_carlo(c: &mut Criterion) {
    let dist = reference::delays();
    let chain = OutcomeChain::build(&dist).unwrap();
    let model = build_augmented(&reference::plant(0.0), reference::D_MAX).unwrap();
    let schedule = synthesize(&chain, &model, Strategy::S5, &SynthesisOptions::default())
        .unwrap()
        .schedule;
    let opts = MonteCarloOptions {
        runs: 256,
        ..MonteCarloOptions::default()
    };

    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| monte_carlo(&model, &schedule, &chain, &dist, black_box(&opts), exec).unwrap())
        });
    }
    group.finish();
}

fn bench_covariance_step(c: &mut Criterion) {
    let dist = reference::delays();
    let chain = OutcomeChain::build(&dist).unwrap();
    let model = build_augmented(&reference::plant(0.25), reference::D_MAX).unwrap();
    let schedule = synthesize(&chain, &model, Strategy::S4, &SynthesisOptions::default())
        .unwrap()
        .schedule;
    let p = CovarianceTuple::scaled_identity(chain.len(), model.state_dim(), 1.0);

    let mut group = c.benchmark_group("covariance_step");
    for (name, exec) in POLICIES {
        let op = JumpOperator::new(&chain, &model, &schedule).unwrap().with_execution(exec);
        group.bench_function(name, |b| b.iter(|| op.apply(black_box(&p))));
    }
    group.finish();
}

criterion_group!(benches, bench_monte_carlo, bench_covariance_step);
criterion_main!(benches);
