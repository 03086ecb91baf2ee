//! Seeded inputs shared by the kernel benchmarks.

use ahgnn::synth::{generate_toy, ToySpec};
use ahgnn::{DenseMatrix, HeteroGraph, SparseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `rows x cols` relation with `nnz` uniformly placed unit entries
/// (duplicates merge, so the count can come out slightly lower).
pub fn random_relation(rows: usize, cols: usize, nnz: usize, seed: u64) -> SparseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triplets: Vec<(usize, usize, f64)> = (0..nnz)
        .map(|_| (rng.random_range(0..rows), rng.random_range(0..cols), 1.0))
        .collect();
    SparseMatrix::from_triplets(rows, cols, &triplets).expect("indices in range")
}

pub fn random_features(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Three-type planted graph with `n` target nodes, left at its planted
/// homophily.
pub fn toy_graph(n: usize) -> HeteroGraph {
    generate_toy(&ToySpec {
        num_target: n,
        num_classes: 4,
        node_types: 3,
        feature_dim: 32,
        max_iterations: 0,
        ..ToySpec::default()
    })
    .expect("valid toy spec")
    .graph
}
