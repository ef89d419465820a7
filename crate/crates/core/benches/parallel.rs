//! Sequential vs data-parallel execution of the three fan-out stages.
//! Build without the `parallel` feature to see both arms run sequentially.

use std::sync::Arc;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use remove_core::expert::generate_demos;
use remove_core::observe::{ObsParams, ObservationKind};
use remove_core::par::Execution;
use remove_core::policy::{train_ensemble, TrainHyper};
use remove_core::runner::{run_suite, RunConfig};
use remove_core::scenario::bundled;

const STRATEGIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn params() -> ObsParams {
    ObsParams::new(ObservationKind::GoalConditioned, 5)
}

fn demos(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate_demos");
    for (name, exec) in STRATEGIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| generate_demos(10, 400, &params(), 1, exec).unwrap())
        });
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let set = generate_demos(10, 60, &params(), 1, Execution::Sequential).unwrap();
    let hyper = TrainHyper { epochs: 5, ..Default::default() };
    let mut g = c.benchmark_group("train_ensemble");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| train_ensemble(&set, 8, 2, &hyper, exec).unwrap())
        });
    }
    g.finish();
}

fn suite(c: &mut Criterion) {
    let set = generate_demos(10, 60, &params(), 1, Execution::Parallel).unwrap();
    let hyper = TrainHyper { epochs: 20, ..Default::default() };
    let policy = Arc::new(train_ensemble(&set, 5, 2, &hyper, Execution::Parallel).unwrap().0);
    let config = RunConfig {
        scenarios: bundled().iter().map(|s| s.id().to_string()).collect(),
        trials: 4,
        ..Default::default()
    };
    let mut g = c.benchmark_group("run_suite");
    g.sample_size(10).measurement_time(Duration::from_secs(10));
    for (name, exec) in STRATEGIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_suite(&bundled(), Some(policy.clone()), &config, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, demos, training, suite);
criterion_main!(benches);
