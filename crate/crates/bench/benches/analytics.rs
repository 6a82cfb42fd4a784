use criterion::{criterion_group, criterion_main, Criterion};
use labelforge_core::analytics::{bootstrap_correlation, spearman, BootstrapOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_spearman(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    let ys: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    c.bench_function("spearman/1000", |b| {
        b.iter(|| spearman(black_box(&xs), black_box(&ys)).unwrap())
    });
}

fn bench_bootstrap(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // 10 label sets with 10 runs each
    let fixed: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let groups: Vec<Vec<f64>> = (0..10)
        .map(|i| {
            (0..10)
                .map(|_| 0.5 + 0.02 * i as f64 + 0.05 * rng.random::<f64>())
                .collect()
        })
        .collect();
    let opts = BootstrapOptions {
        n_boot: 1000,
        seed: 3,
    };
    c.bench_function("bootstrap_correlation/10x10_B1000", |b| {
        b.iter(|| bootstrap_correlation(black_box(&fixed), black_box(&groups), &opts).unwrap())
    });
}

criterion_group!(benches, bench_spearman, bench_bootstrap);
criterion_main!(benches);
