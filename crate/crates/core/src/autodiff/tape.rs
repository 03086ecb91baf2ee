use std::cell::{Cell, Ref, RefCell};

use super::tensor::{Real, Tensor};
use super::AutodiffError;

/// Floor applied to both distributions before taking logs in [`Tape::kl_div`].
pub const KL_FLOOR: f64 = 1e-8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        a: usize,
        rows: usize,
        cols: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    AddBias {
        a: usize,
        bias: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Affine {
        a: usize,
        scale: T,
    },
    ScaleBy {
        a: usize,
        s: usize,
    },
    Index {
        a: usize,
        i: usize,
    },
    Softmax {
        a: usize,
    },
    Sigmoid {
        a: usize,
    },
    Mean {
        a: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Concat {
        parts: Vec<usize>,
        width: usize,
    },
    L2Normalize {
        a: usize,
        norms: Vec<T>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<(usize, usize)>,
        probs: Vec<T>,
    },
    Kl {
        p: usize,
        q: usize,
    },
    SplitHeads {
        a: usize,
        n: usize,
        s: usize,
        heads: usize,
        dh: usize,
    },
    MergeHeads {
        a: usize,
        n: usize,
        s: usize,
        heads: usize,
        dh: usize,
    },
    Reshape {
        a: usize,
    },
    ScaleRows {
        a: usize,
        s: usize,
    },
    SelectHead {
        a: usize,
        heads: usize,
        head: usize,
    },
    Sum {
        a: usize,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b, .. } | BatchMatMul { a, b, .. } | Add { a, b } | Mul { a, b } => {
                vec![*a, *b]
            }
            AddBias { a, bias } => vec![*a, *bias],
            ScaleBy { a, s } | ScaleRows { a, s } => vec![*a, *s],
            Kl { p, q } => vec![*p, *q],
            Concat { parts, .. } => parts.clone(),
            CrossEntropy { logits, .. } => vec![*logits],
            Transpose { a, .. }
            | Affine { a, .. }
            | Index { a, .. }
            | Softmax { a }
            | Sigmoid { a }
            | Mean { a, .. }
            | L2Normalize { a, .. }
            | SplitHeads { a, .. }
            | MergeHeads { a, .. }
            | Reshape { a }
            | SelectHead { a, .. }
            | Sum { a } => vec![*a],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Append-only record of a forward computation. Nodes are stored in creation
/// order, which is a topological order of the computation DAG.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

// out[m,n] += a[m,k] * b[k,n]
fn gemm<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

// out[m,k] += g[m,n] * b[k,n]^T
fn gemm_nt<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] += g_row.iter().zip(b_row).map(|(x, y)| *x * *y).sum::<T>();
        }
    }
}

// out[k,n] += a[m,k]^T * g[m,n]
fn gemm_tn<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &gv) in out[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.record(value, Op::Leaf, false)
    }

    /// Trainable leaf; receives a gradient in [`Tape::backward`].
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.record(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn record(&self, value: Tensor<T>, op: Op<T>, leaf_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = leaf_grad || op.parents().iter().any(|&p| nodes[p].needs_grad);
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var {
        self.record(value, op, false)
    }

    /// `a[..., k] x b[k, n]`, treating all leading axes of `a` as rows.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (value, m, k, n) = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if bv.shape().len() != 2 || av.shape().is_empty() || av.last_dim() != bv.shape()[0] {
                return Err(shape_err(
                    "matmul",
                    format!("{:?} x {:?}", av.shape(), bv.shape()),
                ));
            }
            let (k, n) = (bv.shape()[0], bv.shape()[1]);
            let m = av.numel() / k.max(1);
            let mut out = vec![T::zero(); m * n];
            gemm(av.data(), bv.data(), &mut out, m, k, n);
            let mut shape = av.shape().to_vec();
            *shape.last_mut().expect("rank >= 1") = n;
            (Tensor::new(shape, out), m, k, n)
        };
        Ok(self.push(
            value,
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
        ))
    }

    /// Batched product `[B, m, k] x [B, k, n]`.
    pub fn bmm(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (value, batch, m, k, n) = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (av.shape(), bv.shape());
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
                return Err(shape_err("bmm", format!("{sa:?} x {sb:?}")));
            }
            let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
            let mut out = vec![T::zero(); batch * m * n];
            for bi in 0..batch {
                gemm(
                    &av.data()[bi * m * k..(bi + 1) * m * k],
                    &bv.data()[bi * k * n..(bi + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            (Tensor::new(vec![batch, m, n], out), batch, m, k, n)
        };
        Ok(self.push(
            value,
            Op::BatchMatMul {
                a: a.0,
                b: b.0,
                batch,
                m,
                k,
                n,
            },
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, a: Var) -> Result<Var, AutodiffError> {
        let (value, rows, cols) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let s = av.shape();
            if s.len() < 2 {
                return Err(shape_err("transpose", format!("{s:?}")));
            }
            let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
            let mut shape = s.to_vec();
            let r = shape.len();
            shape.swap(r - 2, r - 1);
            let value = Tensor::new(shape, transpose_blocks(av.data(), rows, cols));
            (value, rows, cols)
        };
        Ok(self.push(value, Op::Transpose { a: a.0, rows, cols }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let nodes = self.nodes.borrow();
        let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn map2(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let nodes = self.nodes.borrow();
        let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    fn map1(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let nodes = self.nodes.borrow();
        let av = &nodes[a.0].value;
        Tensor::new(
            av.shape().to_vec(),
            av.data().iter().map(|x| f(*x)).collect(),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let v = self.map2(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add { a: a.0, b: b.0 }))
    }

    /// Adds a `[n]` bias to every row of `a[..., n]`.
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[bias.0].value);
            let n = av.last_dim();
            if bv.numel() != n {
                return Err(shape_err(
                    "add_bias",
                    format!("{:?} + {:?}", av.shape(), bv.shape()),
                ));
            }
            let mut data = av.data().to_vec();
            for row in data.chunks_mut(n.max(1)) {
                for (x, b) in row.iter_mut().zip(bv.data()) {
                    *x += *b;
                }
            }
            Tensor::new(av.shape().to_vec(), data)
        };
        Ok(self.push(
            value,
            Op::AddBias {
                a: a.0,
                bias: bias.0,
            },
        ))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.map2(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul { a: a.0, b: b.0 }))
    }

    /// `scale * a + shift` with constant coefficients.
    pub fn affine(&self, a: Var, scale: T, shift: T) -> Var {
        let v = self.map1(a, |x| scale * x + shift);
        self.push(v, Op::Affine { a: a.0, scale })
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        self.affine(a, c, T::zero())
    }

    /// Multiplies every entry of `a` by the single-element tensor `s`.
    pub fn scale_by(&self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let factor = {
            let nodes = self.nodes.borrow();
            let sv = &nodes[s.0].value;
            if sv.numel() != 1 {
                return Err(shape_err(
                    "scale_by",
                    format!("scalar expected, got {:?}", sv.shape()),
                ));
            }
            sv.data()[0]
        };
        let v = self.map1(a, |x| x * factor);
        Ok(self.push(v, Op::ScaleBy { a: a.0, s: s.0 }))
    }

    /// Element `i` of the flattened tensor, as a `[1]` tensor.
    pub fn index(&self, a: Var, i: usize) -> Result<Var, AutodiffError> {
        let v = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            *av.data()
                .get(i)
                .ok_or_else(|| shape_err("index", format!("{i} out of {:?}", av.shape())))?
        };
        Ok(self.push(Tensor::scalar(v), Op::Index { a: a.0, i }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, a: Var) -> Result<Var, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            if !av.is_finite() {
                return Err(AutodiffError::NonFinite { op: "softmax" });
            }
            let n = av.last_dim().max(1);
            let mut data = av.data().to_vec();
            for row in data.chunks_mut(n) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    sum += *x;
                }
                for x in row.iter_mut() {
                    *x /= sum;
                }
            }
            Tensor::new(av.shape().to_vec(), data)
        };
        Ok(self.push(value, Op::Softmax { a: a.0 }))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.map1(a, |x| T::one() / (T::one() + (-x).exp()));
        self.push(v, Op::Sigmoid { a: a.0 })
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let (value, outer, len, inner) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let s = av.shape();
            if axis >= s.len() || s[axis] == 0 {
                return Err(shape_err("mean_axis", format!("axis {axis} of {s:?}")));
            }
            let outer: usize = s[..axis].iter().product();
            let len = s[axis];
            let inner: usize = s[axis + 1..].iter().product();
            let inv = T::one() / T::of(len as f64);
            let mut out = vec![T::zero(); outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = &av.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (d, x) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *d += *x;
                    }
                }
            }
            out.iter_mut().for_each(|x| *x *= inv);
            let mut shape: Vec<usize> = s[..axis].iter().chain(&s[axis + 1..]).copied().collect();
            if shape.is_empty() {
                shape.push(1);
            }
            (Tensor::new(shape, out), outer, len, inner)
        };
        Ok(self.push(
            value,
            Op::Mean {
                a: a.0,
                outer,
                len,
                inner,
            },
        ))
    }

    /// Stacks `S` tensors of shape `[N, d]` into `[N, S, d]`.
    pub fn concat_seq(&self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let (value, width) = {
            let nodes = self.nodes.borrow();
            let first = parts
                .first()
                .ok_or_else(|| shape_err("concat_seq", "no inputs".into()))?;
            let s0 = nodes[first.0].value.shape().to_vec();
            if s0.len() != 2 {
                return Err(shape_err(
                    "concat_seq",
                    format!("expected [N, d], got {s0:?}"),
                ));
            }
            for p in parts {
                if nodes[p.0].value.shape() != s0.as_slice() {
                    return Err(shape_err(
                        "concat_seq",
                        format!("{:?} vs {s0:?}", nodes[p.0].value.shape()),
                    ));
                }
            }
            let (n, d, s) = (s0[0], s0[1], parts.len());
            let mut out = Vec::with_capacity(n * s * d);
            for r in 0..n {
                for p in parts {
                    out.extend_from_slice(&nodes[p.0].value.data()[r * d..(r + 1) * d]);
                }
            }
            (Tensor::new(vec![n, s, d], out), d)
        };
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                width,
            },
        ))
    }

    /// Scales each row (last axis) to unit Euclidean norm; zero rows stay zero.
    pub fn l2_normalize(&self, a: Var) -> Var {
        let (value, norms) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let n = av.last_dim().max(1);
            let mut data = av.data().to_vec();
            let mut norms = Vec::with_capacity(data.len() / n);
            for row in data.chunks_mut(n) {
                let norm = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
                norms.push(norm);
                let inv = if norm > T::zero() {
                    T::one() / norm
                } else {
                    T::zero()
                };
                row.iter_mut().for_each(|x| *x *= inv);
            }
            (Tensor::new(av.shape().to_vec(), data), norms)
        };
        self.push(value, Op::L2Normalize { a: a.0, norms })
    }

    /// Mean softmax cross-entropy over `(row, class)` targets of `[N, C]` logits.
    pub fn cross_entropy(
        &self,
        logits: Var,
        targets: &[(usize, usize)],
    ) -> Result<Var, AutodiffError> {
        let (loss, probs) =
            {
                let nodes = self.nodes.borrow();
                let lv = &nodes[logits.0].value;
                let s = lv.shape();
                if s.len() != 2 || targets.is_empty() {
                    return Err(shape_err(
                        "cross_entropy",
                        format!("logits {s:?} with {} targets", targets.len()),
                    ));
                }
                let c = s[1];
                let mut probs = Vec::with_capacity(targets.len() * c);
                let mut total = T::zero();
                for &(r, class) in targets {
                    if r >= s[0] || class >= c {
                        return Err(shape_err(
                            "cross_entropy",
                            format!("target ({r}, {class}) outside {s:?}"),
                        ));
                    }
                    let row = &lv.data()[r * c..(r + 1) * c];
                    let (arg, max) = row.iter().copied().enumerate().fold(
                        (0, T::neg_infinity()),
                        |b, (j, x)| if x > b.1 { (j, x) } else { b },
                    );
                    let rest: T = row
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != arg)
                        .map(|(_, x)| (*x - max).exp())
                        .sum();
                    let shifted = rest.ln_1p();
                    let lse = shifted + max;
                    total += shifted - (row[class] - max);
                    probs.extend(row.iter().map(|x| (*x - lse).exp()));
                }
                let loss = total / T::of(targets.len() as f64);
                if !loss.is_finite() {
                    return Err(AutodiffError::NonFinite {
                        op: "cross_entropy",
                    });
                }
                (loss, probs)
            };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Mean over rows of `KL(p || q)` for row-stochastic `p`, `q`, with both
    /// floored at [`KL_FLOOR`] inside the logarithm.
    pub fn kl_div(&self, p: Var, q: Var) -> Result<Var, AutodiffError> {
        self.same_shape("kl_div", p, q)?;
        let value = {
            let nodes = self.nodes.borrow();
            let (pv, qv) = (&nodes[p.0].value, &nodes[q.0].value);
            if !pv.is_finite() || !qv.is_finite() {
                return Err(AutodiffError::NonFinite { op: "kl_div" });
            }
            let eps = T::of(KL_FLOOR);
            let rows = pv.numel() / pv.last_dim().max(1);
            let total: T = pv
                .data()
                .iter()
                .zip(qv.data())
                .map(|(&pi, &qi)| pi * (pi.max(eps).ln() - qi.max(eps).ln()))
                .sum();
            Tensor::scalar(total / T::of(rows.max(1) as f64))
        };
        Ok(self.push(value, Op::Kl { p: p.0, q: q.0 }))
    }

    /// `[N, S, H*dh] -> [N*H, S, dh]`.
    pub fn split_heads(&self, a: Var, heads: usize) -> Result<Var, AutodiffError> {
        let (value, n, s, dh) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let sh = av.shape();
            if sh.len() != 3 || heads == 0 || !sh[2].is_multiple_of(heads) {
                return Err(shape_err(
                    "split_heads",
                    format!("{sh:?} into {heads} heads"),
                ));
            }
            let (n, s, d) = (sh[0], sh[1], sh[2]);
            let dh = d / heads;
            let mut out = vec![T::zero(); n * s * d];
            for ni in 0..n {
                for si in 0..s {
                    for h in 0..heads {
                        let src = ((ni * s + si) * d) + h * dh;
                        let dst = ((ni * heads + h) * s + si) * dh;
                        out[dst..dst + dh].copy_from_slice(&av.data()[src..src + dh]);
                    }
                }
            }
            (Tensor::new(vec![n * heads, s, dh], out), n, s, dh)
        };
        Ok(self.push(
            value,
            Op::SplitHeads {
                a: a.0,
                n,
                s,
                heads,
                dh,
            },
        ))
    }

    /// `[N*H, S, dh] -> [N, S, H*dh]`.
    pub fn merge_heads(&self, a: Var, heads: usize) -> Result<Var, AutodiffError> {
        let (value, n, s, dh) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let sh = av.shape();
            if sh.len() != 3 || heads == 0 || !sh[0].is_multiple_of(heads) {
                return Err(shape_err(
                    "merge_heads",
                    format!("{sh:?} from {heads} heads"),
                ));
            }
            let (n, s, dh) = (sh[0] / heads, sh[1], sh[2]);
            let d = heads * dh;
            let mut out = vec![T::zero(); n * s * d];
            for ni in 0..n {
                for si in 0..s {
                    for h in 0..heads {
                        let dst = ((ni * s + si) * d) + h * dh;
                        let src = ((ni * heads + h) * s + si) * dh;
                        out[dst..dst + dh].copy_from_slice(&av.data()[src..src + dh]);
                    }
                }
            }
            (Tensor::new(vec![n, s, d], out), n, s, dh)
        };
        Ok(self.push(
            value,
            Op::MergeHeads {
                a: a.0,
                n,
                s,
                heads,
                dh,
            },
        ))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            if shape.iter().product::<usize>() != av.numel() {
                return Err(shape_err(
                    "reshape",
                    format!("{:?} -> {shape:?}", av.shape()),
                ));
            }
            av.clone().reshaped(shape.to_vec())
        };
        Ok(self.push(value, Op::Reshape { a: a.0 }))
    }

    /// Multiplies row `r` (last axis) of `a` by `s[r]`; `s` holds one value
    /// per row, e.g. `a: [N, S, d]`, `s: [N, S]`.
    pub fn scale_rows(&self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, sv) = (&nodes[a.0].value, &nodes[s.0].value);
            let d = av.last_dim().max(1);
            if av.numel() != sv.numel() * d {
                return Err(shape_err(
                    "scale_rows",
                    format!("{:?} by {:?}", av.shape(), sv.shape()),
                ));
            }
            let mut data = av.data().to_vec();
            for (row, f) in data.chunks_mut(d).zip(sv.data()) {
                row.iter_mut().for_each(|x| *x *= *f);
            }
            Tensor::new(av.shape().to_vec(), data)
        };
        Ok(self.push(value, Op::ScaleRows { a: a.0, s: s.0 }))
    }

    /// Picks head `head` from a head-major `[N*H, S, T]` tensor -> `[N, S, T]`.
    pub fn select_head(&self, a: Var, heads: usize, head: usize) -> Result<Var, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let sh = av.shape();
            if sh.len() != 3 || heads == 0 || !sh[0].is_multiple_of(heads) || head >= heads {
                return Err(shape_err(
                    "select_head",
                    format!("head {head}/{heads} of {sh:?}"),
                ));
            }
            let n = sh[0] / heads;
            let block = sh[1] * sh[2];
            let mut out = Vec::with_capacity(n * block);
            for ni in 0..n {
                let start = (ni * heads + head) * block;
                out.extend_from_slice(&av.data()[start..start + block]);
            }
            Tensor::new(vec![n, sh[1], sh[2]], out)
        };
        Ok(self.push(
            value,
            Op::SelectHead {
                a: a.0,
                heads,
                head,
            },
        ))
    }

    pub fn sum(&self, a: Var) -> Var {
        let total = self.nodes.borrow()[a.0].value.data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum { a: a.0 })
    }

    /// Allows one more [`Tape::backward`] call on this tape.
    pub fn reset_backward(&self) {
        self.consumed.set(false);
    }

    /// Reverse sweep from a scalar `loss`. Every contribution is accumulated
    /// into the parent's gradient. A second call without
    /// [`Tape::reset_backward`] is an error.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        if self.consumed.get() {
            return Err(AutodiffError::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.shape();
        if nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape.to_vec()));
        }
        self.consumed.set(true);
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(shape.to_vec(), T::one()));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.needs_grad {
                for (parent, contribution) in backward_op(&nodes, id, &g) {
                    assert!(parent < id, "provenance must be acyclic");
                    if !nodes[parent].needs_grad {
                        continue;
                    }
                    match &mut grads[parent] {
                        Some(acc) => acc.add_assign(&contribution),
                        slot => *slot = Some(contribution),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn transpose_blocks<T: Real>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let block = rows * cols;
    let mut out = vec![T::zero(); data.len()];
    if block == 0 {
        return out;
    }
    for (src, dst) in data.chunks(block).zip(out.chunks_mut(block)) {
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}

/// Vector-Jacobian products of node `id` for upstream gradient `g`.
fn backward_op<T: Real>(nodes: &[Node<T>], id: usize, g: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
    let val = |i: usize| &nodes[i].value;
    let like = |i: usize, data: Vec<T>| Tensor::new(val(i).shape().to_vec(), data);
    let gd = g.data();
    match &nodes[id].op {
        Op::Leaf => vec![],
        &Op::MatMul { a, b, m, k, n } => {
            let mut da = vec![T::zero(); m * k];
            let mut db = vec![T::zero(); k * n];
            if nodes[a].needs_grad {
                gemm_nt(gd, val(b).data(), &mut da, m, k, n);
            }
            if nodes[b].needs_grad {
                gemm_tn(val(a).data(), gd, &mut db, m, k, n);
            }
            vec![(a, like(a, da)), (b, like(b, db))]
        }
        &Op::BatchMatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
        } => {
            let mut da = vec![T::zero(); batch * m * k];
            let mut db = vec![T::zero(); batch * k * n];
            for bi in 0..batch {
                let gs = &gd[bi * m * n..(bi + 1) * m * n];
                if nodes[a].needs_grad {
                    gemm_nt(
                        gs,
                        &val(b).data()[bi * k * n..(bi + 1) * k * n],
                        &mut da[bi * m * k..(bi + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
                if nodes[b].needs_grad {
                    gemm_tn(
                        &val(a).data()[bi * m * k..(bi + 1) * m * k],
                        gs,
                        &mut db[bi * k * n..(bi + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
            vec![(a, like(a, da)), (b, like(b, db))]
        }
        &Op::Transpose { a, rows, cols } => {
            // g has the swapped layout [cols, rows].
            vec![(a, like(a, transpose_blocks(gd, cols, rows)))]
        }
        &Op::Add { a, b } => vec![(a, like(a, gd.to_vec())), (b, like(b, gd.to_vec()))],
        &Op::AddBias { a, bias } => {
            let n = val(bias).numel();
            let mut db = vec![T::zero(); n];
            for row in gd.chunks(n.max(1)) {
                for (d, x) in db.iter_mut().zip(row) {
                    *d += *x;
                }
            }
            vec![(a, like(a, gd.to_vec())), (bias, like(bias, db))]
        }
        &Op::Mul { a, b } => {
            let da = gd.iter().zip(val(b).data()).map(|(x, y)| *x * *y).collect();
            let db = gd.iter().zip(val(a).data()).map(|(x, y)| *x * *y).collect();
            vec![(a, like(a, da)), (b, like(b, db))]
        }
        &Op::Affine { a, scale } => vec![(a, like(a, gd.iter().map(|x| *x * scale).collect()))],
        &Op::ScaleBy { a, s } => {
            let f = val(s).data()[0];
            let da = gd.iter().map(|x| *x * f).collect();
            let ds: T = gd.iter().zip(val(a).data()).map(|(x, y)| *x * *y).sum();
            vec![(a, like(a, da)), (s, like(s, vec![ds]))]
        }
        &Op::Index { a, i } => {
            let mut da = vec![T::zero(); val(a).numel()];
            da[i] = gd[0];
            vec![(a, like(a, da))]
        }
        &Op::Softmax { a } => {
            let y = nodes[id].value.data();
            let n = nodes[id].value.last_dim().max(1);
            let mut da = vec![T::zero(); y.len()];
            for ((dr, yr), gr) in da.chunks_mut(n).zip(y.chunks(n)).zip(gd.chunks(n)) {
                let dot: T = yr.iter().zip(gr).map(|(p, q)| *p * *q).sum();
                for ((d, yi), gi) in dr.iter_mut().zip(yr).zip(gr) {
                    *d = *yi * (*gi - dot);
                }
            }
            vec![(a, like(a, da))]
        }
        &Op::Sigmoid { a } => {
            let y = nodes[id].value.data();
            let da = gd
                .iter()
                .zip(y)
                .map(|(gi, yi)| *gi * *yi * (T::one() - *yi))
                .collect();
            vec![(a, like(a, da))]
        }
        &Op::Mean {
            a,
            outer,
            len,
            inner,
        } => {
            let inv = T::one() / T::of(len as f64);
            let mut da = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        da[(o * len + l) * inner + i] = gd[o * inner + i] * inv;
                    }
                }
            }
            vec![(a, like(a, da))]
        }
        Op::Concat { parts, width } => {
            let s = parts.len();
            let n = gd.len() / (s * width).max(1);
            parts
                .iter()
                .enumerate()
                .map(|(si, &p)| {
                    let mut dp = Vec::with_capacity(n * width);
                    for r in 0..n {
                        let start = (r * s + si) * width;
                        dp.extend_from_slice(&gd[start..start + width]);
                    }
                    (p, like(p, dp))
                })
                .collect()
        }
        Op::L2Normalize { a, norms } => {
            let y = nodes[id].value.data();
            let n = nodes[id].value.last_dim().max(1);
            let mut da = vec![T::zero(); y.len()];
            for (((dr, yr), gr), norm) in da
                .chunks_mut(n)
                .zip(y.chunks(n))
                .zip(gd.chunks(n))
                .zip(norms)
            {
                if *norm <= T::zero() {
                    continue;
                }
                let dot: T = yr.iter().zip(gr).map(|(p, q)| *p * *q).sum();
                for ((d, yi), gi) in dr.iter_mut().zip(yr).zip(gr) {
                    *d = (*gi - *yi * dot) / *norm;
                }
            }
            vec![(*a, like(*a, da))]
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let c = val(*logits).last_dim();
            let scale = gd[0] / T::of(targets.len() as f64);
            let mut dl = vec![T::zero(); val(*logits).numel()];
            for (t, &(r, class)) in targets.iter().enumerate() {
                for j in 0..c {
                    let onehot = if j == class { T::one() } else { T::zero() };
                    dl[r * c + j] += (probs[t * c + j] - onehot) * scale;
                }
            }
            vec![(*logits, like(*logits, dl))]
        }
        &Op::Kl { p, q } => {
            let eps = T::of(KL_FLOOR);
            let (pv, qv) = (val(p).data(), val(q).data());
            let rows = pv.len() / val(p).last_dim().max(1);
            let scale = gd[0] / T::of(rows.max(1) as f64);
            let mut dp = Vec::with_capacity(pv.len());
            let mut dq = Vec::with_capacity(qv.len());
            for (&pi, &qi) in pv.iter().zip(qv) {
                let (pf, qf) = (pi.max(eps), qi.max(eps));
                let dlogp = if pi > eps { T::one() } else { T::zero() };
                dp.push((pf.ln() - qf.ln() + dlogp) * scale);
                dq.push(if qi > eps {
                    -pi / qf * scale
                } else {
                    T::zero()
                });
            }
            vec![(p, like(p, dp)), (q, like(q, dq))]
        }
        &Op::SplitHeads { a, n, s, heads, dh } => {
            let d = heads * dh;
            let mut da = vec![T::zero(); n * s * d];
            for ni in 0..n {
                for si in 0..s {
                    for h in 0..heads {
                        let dst = ((ni * s + si) * d) + h * dh;
                        let src = ((ni * heads + h) * s + si) * dh;
                        da[dst..dst + dh].copy_from_slice(&gd[src..src + dh]);
                    }
                }
            }
            vec![(a, like(a, da))]
        }
        &Op::MergeHeads { a, n, s, heads, dh } => {
            let d = heads * dh;
            let mut da = vec![T::zero(); n * s * d];
            for ni in 0..n {
                for si in 0..s {
                    for h in 0..heads {
                        let src = ((ni * s + si) * d) + h * dh;
                        let dst = ((ni * heads + h) * s + si) * dh;
                        da[dst..dst + dh].copy_from_slice(&gd[src..src + dh]);
                    }
                }
            }
            vec![(a, like(a, da))]
        }
        &Op::Reshape { a } => vec![(a, like(a, gd.to_vec()))],
        &Op::ScaleRows { a, s } => {
            let d = val(a).last_dim().max(1);
            let (av, sv) = (val(a).data(), val(s).data());
            let mut da = gd.to_vec();
            let mut ds = vec![T::zero(); sv.len()];
            for (r, ((dr, ar), gr)) in da
                .chunks_mut(d)
                .zip(av.chunks(d))
                .zip(gd.chunks(d))
                .enumerate()
            {
                dr.iter_mut().for_each(|x| *x *= sv[r]);
                ds[r] = ar.iter().zip(gr).map(|(x, y)| *x * *y).sum();
            }
            vec![(a, like(a, da)), (s, like(s, ds))]
        }
        &Op::SelectHead { a, heads, head } => {
            let sh = val(a).shape();
            let block = sh[1] * sh[2];
            let n = sh[0] / heads;
            let mut da = vec![T::zero(); val(a).numel()];
            for ni in 0..n {
                let dst = (ni * heads + head) * block;
                da[dst..dst + block].copy_from_slice(&gd[ni * block..(ni + 1) * block]);
            }
            vec![(a, like(a, da))]
        }
        &Op::Sum { a } => vec![(a, Tensor::full(val(a).shape().to_vec(), gd[0]))],
    }
}
