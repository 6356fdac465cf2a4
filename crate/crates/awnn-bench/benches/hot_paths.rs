//! Benchmarks of the estimator hot paths: the water-filling weight adjuster,
//! the closed-form weight solver, the pairwise distance table, and a full
//! imputation pass.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use awnn::estimator::{row_imputer, EstimatorConfig};
use awnn::matrix::MaskedMatrix;
use awnn::simplex::{solve_weights, weight_adjuster};
use awnn::synthetic::{generate, SyntheticSpec};
use awnn::RawDistances;

fn normalized_sequence(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sum: f64 = a.iter().sum();
    let shift = (1.0 - sum) / n as f64;
    for x in a.iter_mut() {
        *x += shift;
    }
    a
}

fn bench_weight_adjuster(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seq = normalized_sequence(&mut rng, 1000);
    c.bench_function("weight_adjuster_n1000", |b| {
        b.iter(|| weight_adjuster(black_box(&seq)).unwrap())
    });
}

fn bench_solve_weights(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dists: Vec<(usize, f64)> =
        (0..200).map(|i| (i, rng.random_range(-1.0..10.0))).collect();
    c.bench_function("solve_weights_n200", |b| {
        b.iter(|| solve_weights(black_box(&dists), black_box(0.5)).unwrap())
    });
}

fn bench_distance_table(c: &mut Criterion) {
    let spec = SyntheticSpec { n: 128, m: 128, p: 0.65, seed: 3, ..Default::default() };
    let inst = generate(&spec).unwrap();
    c.bench_function("raw_distances_128x128_p065", |b| {
        b.iter_batched(
            || inst.data.clone(),
            |m: MaskedMatrix| RawDistances::compute(black_box(&m)),
            BatchSize::SmallInput,
        )
    });
}

fn bench_row_imputer(c: &mut Criterion) {
    let spec = SyntheticSpec { n: 96, m: 96, seed: 4, ..Default::default() };
    let inst = generate(&spec).unwrap();
    let config = EstimatorConfig::default();
    c.bench_function("row_imputer_96x96", |b| {
        b.iter(|| row_imputer(black_box(&inst.data), black_box(inst.sigma_eps2), &config).unwrap())
    });
}

criterion_group!(
    benches,
    bench_weight_adjuster,
    bench_solve_weights,
    bench_distance_table,
    bench_row_imputer
);
criterion_main!(benches);
