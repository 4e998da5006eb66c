use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fullstream_bench::{random_distribution, random_joint, rng};
use fullstream_core::sampler::{
    apply_matching, cfg_combine, marginal_duration, matching_weights, sample_duration, sample_semantic,
};
use std::hint::black_box;

fn duration_kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("marginal_duration");
    for n in [64, 1024, 4096] {
        let joint = random_joint(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &joint, |b, j| b.iter(|| marginal_duration(black_box(j), 0.9)));
    }
    g.finish();

    let (p, t, a) = (random_distribution(2), random_distribution(3), random_distribution(4));
    c.bench_function("matching_weights+apply", |b| {
        b.iter(|| {
            let w = matching_weights(black_box(&t), black_box(&a), 5.0).unwrap();
            apply_matching(black_box(&p), &w).unwrap()
        })
    });
}

fn sampling(c: &mut Criterion) {
    let p = random_distribution(5);
    let mut r = rng(6);
    c.bench_function("sample_duration/top_p_0.9", |b| b.iter(|| sample_duration(black_box(&p), 0.9, &mut r)));
    let joint = random_joint(1024, 7);
    c.bench_function("sample_semantic/top_k_5/1024", |b| b.iter(|| sample_semantic(black_box(&joint), 2, 5, 0.9, &mut r)));
    let cond: Vec<f64> = (0..6144).map(|i| (i % 17) as f64).collect();
    let uncond: Vec<f64> = (0..6144).map(|i| (i % 11) as f64).collect();
    c.bench_function("cfg_combine/6144", |b| b.iter(|| cfg_combine(black_box(&cond), black_box(&uncond), 1.5)));
}

criterion_group!(benches, duration_kernels, sampling);
criterion_main!(benches);
