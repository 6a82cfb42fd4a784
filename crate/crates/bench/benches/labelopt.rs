use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use labelforge_bench::normal_instance;
use labelforge_core::labelopt::{hill_climb, objective, optimize_labels, random_assignment};
use labelforge_core::{LabelAssignment, OptimizeOptions};
use std::hint::black_box;

fn bench_objective(c: &mut Criterion) {
    let (m, classes) = normal_instance(100, 50, 3, 1);
    let a = LabelAssignment::new(vec![3, 17, 41], 50, "bench").unwrap();
    c.bench_function("objective/K100_V50_C3", |b| {
        b.iter(|| objective(black_box(&m), black_box(&classes), black_box(&a)).unwrap())
    });
}

fn bench_hill_climb(c: &mut Criterion) {
    let mut group = c.benchmark_group("hill_climb");
    for &(k, v) in &[(10usize, 50usize), (100, 50), (100, 500)] {
        let (m, classes) = normal_instance(k, v, 3, 2);
        let start = LabelAssignment::new(random_assignment(v, 3, 7, 0), v, "bench").unwrap();
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("K{k}_V{v}")),
            &(),
            |b, _| b.iter(|| hill_climb(&m, &classes, black_box(&start), 100).unwrap()),
        );
    }
    group.finish();
}

fn bench_optimize(c: &mut Criterion) {
    let (m, classes) = normal_instance(100, 50, 3, 3);
    let opts = OptimizeOptions::default();
    c.bench_function("optimize_labels/K100_V50_R10", |b| {
        b.iter(|| optimize_labels(&m, &classes, 3, black_box(&opts)).unwrap())
    });
}

criterion_group!(benches, bench_objective, bench_hill_climb, bench_optimize);
criterion_main!(benches);
