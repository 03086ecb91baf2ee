use ahgnn::model::Model;
use ahgnn::propagate::precompute;
use ahgnn::train::TrainConfig;
use ahgnn::{normalize_relation, spmm, spspmm};
use ahgnn_bench::{random_features, random_relation, toy_graph};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn sparse_dense(c: &mut Criterion) {
    let mut group = c.benchmark_group("spmm");
    let x = random_features(4000, 32, 1);
    for nnz in [20_000, 40_000, 80_000] {
        let a = normalize_relation(&random_relation(4000, 4000, nnz, 2)).unwrap();
        group.throughput(Throughput::Elements(a.nnz() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(nnz), &a, |b, a| {
            b.iter(|| spmm(a, &x).unwrap());
        });
    }
    group.finish();
}

fn sparse_sparse(c: &mut Criterion) {
    let mut group = c.benchmark_group("spspmm");
    for nnz in [5_000, 20_000] {
        let a = random_relation(2000, 1000, nnz, 3);
        let at = a.transpose();
        group.bench_with_input(BenchmarkId::from_parameter(nnz), &nnz, |b, _| {
            b.iter(|| spspmm(&a, &at).unwrap());
        });
    }
    group.finish();
}

fn propagation(c: &mut Criterion) {
    let mut group = c.benchmark_group("precompute");
    group.sample_size(10);
    for n in [200, 800] {
        let g = toy_graph(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &g, |b, g| {
            b.iter(|| precompute(g, 3, 3).unwrap());
        });
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    let g = toy_graph(400);
    let cache = precompute(&g, 3, 3).unwrap();
    let config = TrainConfig {
        hidden: 64,
        ..TrainConfig::default()
    };
    let model = Model::<f32>::for_cache(config.model_config(), &cache, g.num_classes(), 0).unwrap();
    for batch in [0, 100] {
        group.bench_with_input(BenchmarkId::new("batch", batch), &batch, |b, &batch| {
            b.iter(|| model.forward(&cache, batch).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, sparse_dense, sparse_sparse, propagation, forward);
criterion_main!(benches);
