use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use trackode::bench::{self, ExperimentSpec};

fn cell() -> ExperimentSpec {
    ExperimentSpec::from_json(
        r#"{"name":"bench","model":"scalar-nonlinear","theta_star":[1.4,1.0],"n":30,"sigma":2,
            "n_mc":4,"seed":9,"lambda_grid":[10,1000],"estimators":["tracking","nls"],
            "fit":{"n_starts":2,"grid_steps":400}}"#,
    )
    .expect("bench spec")
}

fn monte_carlo(c: &mut Criterion) {
    let spec = cell();
    let mut group = c.benchmark_group("monte_carlo_cell");
    group.sample_size(10);
    for parallel in [false, true] {
        let label = if parallel { "parallel" } else { "sequential" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &parallel, |b, &p| {
            b.iter(|| black_box(bench::run_monte_carlo_with(&spec, p).expect("run")))
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo);
criterion_main!(benches);
