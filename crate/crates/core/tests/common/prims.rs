//! Gradient-check cases for every tape primitive, each drawing a random
//! shape per call.
#![allow(dead_code)]

use ahgnn::autodiff::{grad_check, AutodiffError, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Case = (
    Vec<Tensor<f64>>,
    Box<dyn Fn(&Tape<f64>, &[Var]) -> Result<Var, AutodiffError>>,
);

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

/// Reduces `y` to a scalar through a fixed random weighting.
fn probe(tape: &Tape<f64>, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let shape = tape.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, &shape));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

pub fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..5)
}

pub fn matmul(rng: &mut ChaCha8Rng) -> Case {
    let (n, s, k, m) = (dim(rng), dim(rng), dim(rng), dim(rng));
    let inputs = vec![random(rng, &[n, s, k]), random(rng, &[k, m])];
    (inputs, Box::new(|t, v| probe(t, t.matmul(v[0], v[1])?, 1)))
}

pub fn batched_matmul(rng: &mut ChaCha8Rng) -> Case {
    let (b, m, k, n) = (dim(rng), dim(rng), dim(rng), dim(rng));
    let inputs = vec![random(rng, &[b, m, k]), random(rng, &[b, k, n])];
    (inputs, Box::new(|t, v| probe(t, t.bmm(v[0], v[1])?, 2)))
}

pub fn transpose(rng: &mut ChaCha8Rng) -> Case {
    let inputs = vec![{
        let s = [dim(rng), dim(rng), dim(rng)];
        random(rng, &s)
    }];
    (inputs, Box::new(|t, v| probe(t, t.transpose(v[0])?, 3)))
}

pub fn add_mul_and_bias(rng: &mut ChaCha8Rng) -> Case {
    let shape = [dim(rng), dim(rng), dim(rng)];
    let inputs = vec![
        random(rng, &shape),
        random(rng, &shape),
        random(rng, &shape[2..]),
    ];
    (
        inputs,
        Box::new(|t, v| {
            let s = t.add(v[0], v[1])?;
            let p = t.mul(s, v[1])?;
            probe(t, t.add_bias(p, v[2])?, 4)
        }),
    )
}

pub fn scalar_scaling(rng: &mut ChaCha8Rng) -> Case {
    let inputs = vec![
        {
            let s = [dim(rng), dim(rng)];
            random(rng, &s)
        },
        random(rng, &[1]),
    ];
    (
        inputs,
        Box::new(|t, v| {
            let a = t.affine(v[0], 0.7, -0.2);
            probe(t, t.scale_by(a, v[1])?, 5)
        }),
    )
}

pub fn softmax_rows(rng: &mut ChaCha8Rng) -> Case {
    let inputs = vec![{
        let s = [dim(rng), dim(rng), dim(rng) + 1];
        random(rng, &s)
    }];
    (inputs, Box::new(|t, v| probe(t, t.softmax(v[0])?, 6)))
}

pub fn sigmoid(rng: &mut ChaCha8Rng) -> Case {
    let inputs = vec![{
        let s = [dim(rng), dim(rng)];
        random(rng, &s)
    }];
    (inputs, Box::new(|t, v| probe(t, t.sigmoid(v[0]), 7)))
}

pub fn mean_over_each_axis(rng: &mut ChaCha8Rng) -> Case {
    let axis = rng.random_range(0..3);
    let inputs = vec![{
        let s = [dim(rng), dim(rng), dim(rng)];
        random(rng, &s)
    }];
    (
        inputs,
        Box::new(move |t, v| probe(t, t.mean_axis(v[0], axis)?, 8)),
    )
}

pub fn concat_along_sequence(rng: &mut ChaCha8Rng) -> Case {
    let (n, d) = (dim(rng), dim(rng));
    let s = dim(rng);
    let inputs: Vec<_> = (0..s).map(|_| random(rng, &[n, d])).collect();
    (inputs, Box::new(|t, v| probe(t, t.concat_seq(v)?, 9)))
}

pub fn l2_normalize_rows(rng: &mut ChaCha8Rng) -> Case {
    let inputs = vec![{
        let s = [dim(rng), dim(rng) + 1];
        random(rng, &s)
    }];
    (inputs, Box::new(|t, v| probe(t, t.l2_normalize(v[0]), 10)))
}

pub fn masked_cross_entropy(rng: &mut ChaCha8Rng) -> Case {
    let (n, c) = (dim(rng) + 1, dim(rng) + 1);
    let mut targets = vec![(0, 0)];
    for r in 1..n {
        if rng.random_bool(0.7) {
            targets.push((r, rng.random_range(0..c)));
        }
    }
    let inputs = vec![random(rng, &[n, c])];
    (
        inputs,
        Box::new(move |t, v| t.cross_entropy(v[0], &targets)),
    )
}

pub fn kl_between_softmax_rows(rng: &mut ChaCha8Rng) -> Case {
    let shape = [dim(rng), dim(rng), dim(rng) + 1];
    let inputs = vec![random(rng, &shape), random(rng, &shape)];
    (
        inputs,
        Box::new(|t, v| {
            let p = t.softmax(v[0])?;
            let q = t.softmax(v[1])?;
            t.kl_div(p, q)
        }),
    )
}

pub fn head_reshuffles(rng: &mut ChaCha8Rng) -> Case {
    let heads = dim(rng);
    let (n, s, dh) = (dim(rng), dim(rng), dim(rng));
    let head = rng.random_range(0..heads);
    let inputs = vec![random(rng, &[n, s, heads * dh]), random(rng, &[n, s])];
    (
        inputs,
        Box::new(move |t, v| {
            let sp = t.split_heads(v[0], heads)?;
            let sel = t.select_head(sp, heads, head)?;
            let m = t.merge_heads(sp, heads)?;
            let r = t.reshape(m, &[n * s, heads * dh])?;
            let r = t.reshape(r, &[n, s, heads * dh])?;
            let sc = t.scale_rows(r, v[1])?;
            let a = probe(t, sc, 11)?;
            let b = probe(t, sel, 12)?;
            let bi = t.index(b, 0)?;
            t.add(a, bi)
        }),
    )
}

pub fn attention_composite(rng: &mut ChaCha8Rng) -> Case {
    let (n, s, d) = (dim(rng), dim(rng) + 1, 2 * dim(rng));
    let inputs = vec![
        random(rng, &[n, s, d]),
        random(rng, &[d, d]),
        random(rng, &[d, d]),
        random(rng, &[d, d]),
    ];
    (
        inputs,
        Box::new(|t, v| {
            let q = t.split_heads(t.matmul(v[0], v[1])?, 2)?;
            let k = t.split_heads(t.matmul(v[0], v[2])?, 2)?;
            let val = t.split_heads(t.matmul(v[0], v[3])?, 2)?;
            let scores = t.scale(t.bmm(q, t.transpose(k)?)?, 0.5);
            let attn = t.softmax(scores)?;
            let out = t.merge_heads(t.bmm(attn, val)?, 2)?;
            let pooled = t.l2_normalize(t.mean_axis(out, 1)?);
            probe(t, pooled, 13)
        }),
    )
}

pub const ALL: &[(&str, fn(&mut ChaCha8Rng) -> Case)] = &[
    ("matmul", matmul),
    ("bmm", batched_matmul),
    ("transpose", transpose),
    ("add_mul", add_mul_and_bias),
    ("scale", scalar_scaling),
    ("softmax", softmax_rows),
    ("sigmoid", sigmoid),
    ("mean", mean_over_each_axis),
    ("concat", concat_along_sequence),
    ("l2", l2_normalize_rows),
    ("ce", masked_cross_entropy),
    ("kl", kl_between_softmax_rows),
    ("heads", head_reshuffles),
    ("attention", attention_composite),
];

/// Worst relative error and coordinate count over `shapes` random draws.
pub fn check(
    name: &str,
    case: fn(&mut ChaCha8Rng) -> Case,
    shapes: usize,
    eps: f64,
) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ name.len() as u64);
    let (mut worst, mut coords) = (0.0f64, 0);
    for _ in 0..shapes {
        let (inputs, f) = case(&mut rng);
        let r = grad_check(&*f, &inputs, eps).unwrap();
        worst = worst.max(r.max_rel_error);
        coords += r.coordinates;
    }
    (worst, coords)
}
