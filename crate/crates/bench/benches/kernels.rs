use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use probekit::embed::{embed_batch, CacheHandle};
use probekit::probe::fit_logreg;
use probekit::reduce::{fit_pca, symmetric_eigen_jacobi, FitTarget, Reducer};
use probekit::{LogRegOptions, ProviderSpec, SyntheticConfig};
use probekit_bench::{linear_features, random_matrix, tagged_texts};

fn pca(c: &mut Criterion) {
    let tall = random_matrix(2000, 256, 1);
    c.bench_function("fit_pca 2000x256 k=50", |b| b.iter(|| fit_pca(black_box(&tall), 50).unwrap()));
    let wide = random_matrix(200, 1536, 2);
    c.bench_function("fit_pca 200x1536 k=50", |b| b.iter(|| fit_pca(black_box(&wide), 50).unwrap()));
    c.bench_function("reducer fit 2000x256 differences", |b| {
        b.iter(|| Reducer::fit(black_box(&tall), 50, FitTarget::Differences).unwrap())
    });
}

fn jacobi(c: &mut Criterion) {
    let x = random_matrix(100, 32, 3);
    let cov = x.transpose() * &x;
    c.bench_function("jacobi eigen 32x32", |b| b.iter(|| symmetric_eigen_jacobi(black_box(&cov))));
}

fn probe(c: &mut Criterion) {
    let opts = LogRegOptions::default();
    for k in [1, 10, 50] {
        let fs = linear_features(4000, k, 4);
        c.bench_function(&format!("fit_logreg n=4000 k={k}"), |b| b.iter(|| fit_logreg(black_box(&fs), &opts).unwrap()));
    }
}

fn synthetic_embedding(c: &mut Criterion) {
    let p = ProviderSpec::synthetic("bench-synthetic", SyntheticConfig { dim: 256, noise_sigma: 0.3, ..SyntheticConfig::default() });
    let texts = tagged_texts(1000);
    c.bench_function("synthetic embed_batch 1000x256 cold cache", |b| {
        b.iter(|| embed_batch(&p, black_box(&texts), &CacheHandle::in_memory()).unwrap())
    });
}

criterion_group!(benches, pca, jacobi, probe, synthetic_embedding);
criterion_main!(benches);
