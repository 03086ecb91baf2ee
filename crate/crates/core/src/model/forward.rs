use std::collections::BTreeMap;

use super::params::{prefix_key, AhcParams, AttentionParams, FusionParams, ModelParams};
use super::ModelError;
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::dense::DenseMatrix;
use crate::propagate::MessageCache;

/// Per-path embeddings, `[N, d]` each.
#[derive(Clone, Debug, Default)]
pub struct Embeddings {
    pub features: BTreeMap<String, Var>,
    pub labels: BTreeMap<String, Var>,
}

fn input<T: Real>(tape: &Tape<T>, m: &DenseMatrix) -> Var {
    tape.constant(Tensor::from_f64(vec![m.rows(), m.cols()], m.as_slice()))
}

fn weighted_hops<'a, T: Real>(
    tape: &Tape<T>,
    key: &str,
    hops: &[DenseMatrix],
    gamma: Var,
    mut projection: impl FnMut(usize) -> Result<&'a super::Linear<Var>, ModelError>,
) -> Result<Var, ModelError> {
    let len = tape.shape(gamma).iter().product::<usize>();
    if len != hops.len() {
        return Err(ModelError::HopMismatch {
            path: key.to_string(),
            expected: len,
            found: hops.len(),
        });
    }
    let mut acc: Option<Var> = None;
    for (l, m) in hops.iter().enumerate() {
        let p = projection(l)?;
        let mut y = tape.matmul(input(tape, m), p.weight)?;
        if let Some(b) = p.bias {
            y = tape.add_bias(y, b)?;
        }
        let term = tape.scale_by(y, tape.index(gamma, l)?)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| ModelError::HopMismatch {
        path: key.to_string(),
        expected: len,
        found: 0,
    })
}

/// One embedding per cached path: `sum_l gamma_l * f(S_l)`, where hop `l` of
/// a feature path goes through the projection shared by its prefix.
pub fn ahc_forward<T: Real>(
    tape: &Tape<T>,
    cache: &MessageCache,
    ahc: &AhcParams<Var>,
) -> Result<Embeddings, ModelError> {
    let mut out = Embeddings::default();
    for (key, hops) in &cache.feature_entries {
        let gamma = *ahc
            .feature_gamma
            .get(key)
            .ok_or_else(|| ModelError::MissingParam(format!("hop weights for {key}")))?;
        let emb = weighted_hops(tape, key, hops, gamma, |l| {
            let prefix = prefix_key(key, l);
            ahc.feature_projections
                .get(&prefix)
                .ok_or(ModelError::MissingProjection(prefix))
        })?;
        out.features.insert(key.clone(), emb);
    }
    for (key, hops) in &cache.label_entries {
        let gamma = *ahc
            .label_gamma
            .get(key)
            .ok_or_else(|| ModelError::MissingParam(format!("label hop weights for {key}")))?;
        let projections = ahc
            .label_projections
            .get(key)
            .ok_or_else(|| ModelError::MissingProjection(format!("label:{key}")))?;
        let emb = weighted_hops(tape, key, hops, gamma, |l| {
            projections
                .get(l)
                .ok_or_else(|| ModelError::MissingProjection(format!("label:{key}/{l}")))
        })?;
        out.labels.insert(key.clone(), emb);
    }
    Ok(out)
}

/// `[N, S, d]` token sequence: feature paths then label paths, each in key
/// order.
pub fn assemble_tokens<T: Real>(tape: &Tape<T>, emb: &Embeddings) -> Result<Var, ModelError> {
    let parts: Vec<Var> = emb
        .features
        .values()
        .chain(emb.labels.values())
        .copied()
        .collect();
    if parts.is_empty() {
        return Err(ModelError::EmptyCache);
    }
    Ok(tape.concat_seq(&parts)?)
}

/// Multi-head self-attention over each node's token sequence. Returns the
/// output `[N, S, d]` and the attention maps `[N*H, S, S]` (head-major per
/// node).
pub fn multi_head_attention<T: Real>(
    tape: &Tape<T>,
    x: Var,
    p: &AttentionParams<Var>,
    heads: usize,
) -> Result<(Var, Var), ModelError> {
    let d = *tape.shape(x).last().unwrap_or(&0);
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(ModelError::Heads { hidden: d, heads });
    }
    let q = tape.split_heads(tape.matmul(x, p.wq)?, heads)?;
    let k = tape.split_heads(tape.matmul(x, p.wk)?, heads)?;
    let v = tape.split_heads(tape.matmul(x, p.wv)?, heads)?;
    let dh = (d / heads) as f64;
    let scores = tape.scale(tape.bmm(q, tape.transpose(k)?)?, T::of(1.0 / dh.sqrt()));
    let attn = tape.softmax(scores)?;
    let ctx = tape.merge_heads(tape.bmm(attn, v)?, heads)?;
    Ok((tape.matmul(ctx, p.wo)?, attn))
}

pub fn coarse_attention<T: Real>(
    tape: &Tape<T>,
    tokens: Var,
    fusion: &FusionParams<Var>,
    heads: usize,
) -> Result<(Var, Var), ModelError> {
    multi_head_attention(tape, tokens, &fusion.coarse, heads)
}

/// `beta_k`: attention mass on key `k`, averaged over heads and queries.
/// Input `[N*H, S, S]`, output `[N, S]`.
pub fn influence_factors<T: Real>(
    tape: &Tape<T>,
    attn: Var,
    heads: usize,
) -> Result<Var, ModelError> {
    let shape = tape.shape(attn);
    let (nh, s) = (shape[0], shape[1]);
    let grouped = tape.reshape(attn, &[nh / heads, heads * s, s])?;
    Ok(tape.mean_axis(grouped, 1)?)
}

/// Self-attention over tokens scaled by their influence factors.
pub fn fine_attention<T: Real>(
    tape: &Tape<T>,
    tokens: Var,
    beta: Var,
    fusion: &FusionParams<Var>,
    heads: usize,
) -> Result<(Var, Var), ModelError> {
    let scaled = tape.scale_rows(tokens, beta)?;
    multi_head_attention(tape, scaled, &fusion.fine, heads)
}

/// Gated sum of both levels, mean-pooled over the sequence. Returns the
/// raw pooled rows, their L2-normalized form, and the logits.
pub fn fuse_pool_classify<T: Real>(
    tape: &Tape<T>,
    coarse: Var,
    fine: Var,
    fusion: &FusionParams<Var>,
) -> Result<(Var, Var, Var), ModelError> {
    let a = tape.sigmoid(fusion.gate);
    let rest = tape.affine(a, -T::one(), T::one());
    let h = tape.add(tape.scale_by(coarse, a)?, tape.scale_by(fine, rest)?)?;
    let pooled = tape.mean_axis(h, 1)?;
    let z = tape.l2_normalize(pooled);
    let mut logits = tape.matmul(z, fusion.classifier.weight)?;
    if let Some(b) = fusion.classifier.bias {
        logits = tape.add_bias(logits, b)?;
    }
    Ok((pooled, z, logits))
}

/// Handles of every intermediate a loss or a report might need.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub tokens: Var,
    pub coarse: Var,
    /// `[N*H, S, S]`.
    pub coarse_attention: Var,
    /// `[N, S]`.
    pub beta: Var,
    pub fine: Var,
    pub fine_attention: Var,
    pub pooled: Var,
    pub embedding: Var,
    pub logits: Var,
}

/// Full forward pass for the rows present in `cache`.
pub fn forward_on_tape<T: Real>(
    tape: &Tape<T>,
    cache: &MessageCache,
    params: &ModelParams<Var>,
    heads: usize,
) -> Result<ForwardVars, ModelError> {
    let emb = ahc_forward(tape, cache, &params.ahc)?;
    let tokens = assemble_tokens(tape, &emb)?;
    let (coarse, coarse_attention) = coarse_attention(tape, tokens, &params.fusion, heads)?;
    let beta = influence_factors(tape, coarse_attention, heads)?;
    let (fine, fine_attention) = fine_attention(tape, tokens, beta, &params.fusion, heads)?;
    let (pooled, embedding, logits) = fuse_pool_classify(tape, coarse, fine, &params.fusion)?;
    Ok(ForwardVars {
        tokens,
        coarse,
        coarse_attention,
        beta,
        fine,
        fine_attention,
        pooled,
        embedding,
        logits,
    })
}
