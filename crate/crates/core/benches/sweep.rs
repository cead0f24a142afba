use criterion::{criterion_group, criterion_main, Criterion};
use disttrack::experiment::{run_all, run_sequential, ExperimentSpec, RunSpec};

fn grid() -> Vec<RunSpec> {
    let mut spec = ExperimentSpec::default();
    spec.apply_config("tracker=hh,quantile,allq\nk=2,4,8\neps=0.1,0.05\nphi=0.2\nn=20000\ncheckpoint-every=1000\n")
        .expect("valid sweep");
    spec.runs().expect("valid runs")
}

fn sweep(c: &mut Criterion) {
    let runs = grid();
    let mut g = c.benchmark_group("sweep_18_runs");
    g.sample_size(10);
    g.bench_function("sequential", |b| {
        b.iter(|| run_sequential(&runs).into_iter().map(|r| r.unwrap().rows.len()).sum::<usize>())
    });
    // run_all falls back to sequential without the `parallel` feature
    g.bench_function("run_all", |b| {
        b.iter(|| run_all(&runs).into_iter().map(|r| r.unwrap().rows.len()).sum::<usize>())
    });
    g.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
