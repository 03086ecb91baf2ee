mod common;

use ahgnn::autodiff::Tape;
use common::prims::{self, dim, random, Case};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;
const EPS: f64 = 1e-5;
const SHAPES: usize = 20;

fn run(name: &str, case: fn(&mut ChaCha8Rng) -> Case) {
    let (worst, coords) = prims::check(name, case, SHAPES, EPS);
    assert!(coords >= SHAPES);
    assert!(worst <= TOL, "{name}: rel error {worst}");
}

#[test]
fn matmul() {
    run("matmul", prims::matmul);
}

#[test]
fn batched_matmul() {
    run("bmm", prims::batched_matmul);
}

#[test]
fn transpose() {
    run("transpose", prims::transpose);
}

#[test]
fn add_mul_and_bias() {
    run("add_mul", prims::add_mul_and_bias);
}

#[test]
fn scalar_scaling() {
    run("scale", prims::scalar_scaling);
}

#[test]
fn softmax_rows() {
    run("softmax", prims::softmax_rows);
}

#[test]
fn sigmoid() {
    run("sigmoid", prims::sigmoid);
}

#[test]
fn mean_over_each_axis() {
    run("mean", prims::mean_over_each_axis);
}

#[test]
fn concat_along_sequence() {
    run("concat", prims::concat_along_sequence);
}

#[test]
fn l2_normalize_rows() {
    run("l2", prims::l2_normalize_rows);
}

#[test]
fn masked_cross_entropy() {
    run("ce", prims::masked_cross_entropy);
}

#[test]
fn kl_between_softmax_rows() {
    run("kl", prims::kl_between_softmax_rows);
}

#[test]
fn head_reshuffles() {
    run("heads", prims::head_reshuffles);
}

#[test]
fn attention_composite() {
    run("attention", prims::attention_composite);
}

#[test]
fn softmax_rows_sum_to_one_and_kl_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..SHAPES {
        let tape = Tape::new();
        let shape = [dim(&mut rng), dim(&mut rng) + 1];
        let p = tape
            .softmax(tape.constant(random(&mut rng, &shape)))
            .unwrap();
        let q = tape
            .softmax(tape.constant(random(&mut rng, &shape)))
            .unwrap();
        for row in tape.value(p).data().chunks(shape[1]) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let pp = tape.kl_div(p, p).unwrap();
        assert!(tape.value(pp).data()[0].abs() < 1e-12);
        let pq = tape.kl_div(p, q).unwrap();
        assert!(tape.value(pq).data()[0] >= 0.0);
    }
}
