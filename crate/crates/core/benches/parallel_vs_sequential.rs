use criterion::{criterion_group, criterion_main, Criterion};

use odebayes::study::{run_study_with, StudyConfig};
use odebayes::Execution;

fn small_study() -> StudyConfig {
    StudyConfig::from_json(r#"{"method": ["rktb", "ts"], "n": 100, "replications": 8, "draws_per_rep": 100, "seed": 1}"#).unwrap()
}

fn study_schedules(c: &mut Criterion) {
    let config = small_study();
    let mut group = c.benchmark_group("study_n100_r8");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| run_study_with(&config, Execution::Parallel).unwrap()));
    group.bench_function("sequential", |b| b.iter(|| run_study_with(&config, Execution::Sequential).unwrap()));
    group.finish();
}

criterion_group!(benches, study_schedules);
criterion_main!(benches);
