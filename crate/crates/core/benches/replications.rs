use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mscp_core::harness::{run_figure1, run_regression, ExperimentConfig, Gamma, Method, Task};
use mscp_core::Execution;

fn regression_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Task::Regression, 16, vec![Method::Cp, Method::PooledWcp, Method::MergedVote(Gamma::Value(0.5))]);
    cfg.record_runtime = false;
    cfg
}

fn figure1_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Task::Figure1, 200, vec![Method::Wcp]);
    cfg.mu_list = vec![0.0, 4.0];
    cfg.n_list = vec![10, 50];
    cfg.record_runtime = false;
    cfg
}

fn bench_replications(c: &mut Criterion) {
    let mut group = c.benchmark_group("replications");
    group.sample_size(10);
    for execution in [Execution::Sequential, Execution::Parallel] {
        let label = format!("{execution:?}");
        group.bench_with_input(BenchmarkId::new("regression", &label), &execution, |b, &e| {
            let cfg = regression_config();
            b.iter(|| run_regression(&cfg, e).unwrap());
        });
        group.bench_with_input(BenchmarkId::new("figure1", &label), &execution, |b, &e| {
            let cfg = figure1_config();
            b.iter(|| run_figure1(&cfg, e).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, bench_replications);
criterion_main!(benches);
