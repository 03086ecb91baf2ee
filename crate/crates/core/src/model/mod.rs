//! Per-path convolution with learnable hop weights, followed by two levels
//! of multi-head attention over the resulting path tokens.
//!
//! For a node, every meta-path contributes one token. The coarse level
//! attends over the raw tokens; its averaged attention mass per token (the
//! influence factors) rescales the tokens for the fine level. A learned gate
//! blends both outputs, which are then mean-pooled, L2-normalized and
//! classified.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
};
pub use forward::{
    ahc_forward, assemble_tokens, coarse_attention, fine_attention, forward_on_tape,
    fuse_pool_classify, influence_factors, multi_head_attention, Embeddings, ForwardVars,
};
pub use params::{
    is_gamma, prefix_key, AhcParams, AttentionParams, FusionParams, Linear, ModelConfig,
    ModelLayout, ModelParams,
};

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Real, Tape, Tensor, Var};
use crate::propagate::MessageCache;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    Alpha(f64),
    #[error("hidden size {hidden} is not divisible by {heads} heads")]
    Heads { hidden: usize, heads: usize },
    #[error("message cache holds no paths")]
    EmptyCache,
    #[error("no projection for prefix `{0}`")]
    MissingProjection(String),
    #[error("missing parameter: {0}")]
    MissingParam(String),
    #[error("path {path}: {expected} hop weights but {found} cached hops")]
    HopMismatch {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("input width mismatch at `{key}`: expected {expected}, found {found}")]
    InputWidth {
        key: String,
        expected: usize,
        found: usize,
    },
    #[error("checkpoint does not fit the cache: missing {missing:?}, unexpected {unexpected:?}")]
    LayoutMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Initial hop weights `gamma_l = alpha (1 - alpha)^l` for `l < hops` and
/// `gamma_hops = (1 - alpha)^hops`, which sum to one.
pub fn init_gamma(alpha: f64, hops: usize) -> Result<Vec<f64>, ModelError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ModelError::Alpha(alpha));
    }
    let mut g: Vec<f64> = (0..hops)
        .map(|l| alpha * (1.0 - alpha).powi(l as i32))
        .collect();
    g.push((1.0 - alpha).powi(hops as i32));
    Ok(g)
}

/// Forward results for every target node.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput<T> {
    /// `[N, C]`.
    pub logits: Tensor<T>,
    /// `[N, H, S, S]`.
    pub coarse_attention: Tensor<T>,
    /// `[N, H, S, S]`.
    pub fine_attention: Tensor<T>,
    /// `[N, S]`, rows sum to one.
    pub beta: Tensor<T>,
    /// `[N, d]`, L2-normalized pooled embeddings.
    pub embeddings: Tensor<T>,
    /// Nodes whose pooled embedding was exactly zero before normalization.
    pub zero_norm_rows: Vec<usize>,
}

impl<T: Real> ModelOutput<T> {
    pub fn predictions(&self) -> Vec<usize> {
        let c = self.logits.last_dim().max(1);
        self.logits
            .data()
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, T::neg_infinity()),
                        |b, (j, &x)| if x > b.1 { (j, x) } else { b },
                    )
                    .0
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub layout: ModelLayout,
    pub params: ModelParams<Tensor<T>>,
}

struct BatchOut<T> {
    logits: Tensor<T>,
    coarse: Tensor<T>,
    fine: Tensor<T>,
    beta: Tensor<T>,
    embeddings: Tensor<T>,
    zero: Vec<usize>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, layout: ModelLayout, seed: u64) -> Result<Self, ModelError> {
        let params = ModelParams::init(&config, &layout, seed)?;
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn for_cache(
        config: ModelConfig,
        cache: &MessageCache,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let layout = ModelLayout::from_cache(cache, num_classes)?;
        Self::new(config, layout, seed)
    }

    /// Refuses caches whose paths or hop widths differ from the model's.
    pub fn check_cache(&self, cache: &MessageCache) -> Result<(), ModelError> {
        let found = ModelLayout::from_cache(cache, self.layout.num_classes)?;
        if found == self.layout {
            return Ok(());
        }
        let describe = |l: &ModelLayout| -> Vec<String> {
            l.feature_paths
                .iter()
                .map(|(k, h)| format!("{k}{h:?}"))
                .chain(l.label_paths.iter().map(|(k, h)| format!("label:{k}x{h}")))
                .collect()
        };
        let (want, have) = (describe(&self.layout), describe(&found));
        Err(ModelError::LayoutMismatch {
            missing: want.iter().filter(|k| !have.contains(k)).cloned().collect(),
            unexpected: have.iter().filter(|k| !want.contains(k)).cloned().collect(),
        })
    }

    /// Records every parameter on `tape`. Hop weights become constants under
    /// the fixed-weight ablation.
    pub fn bind(&self, tape: &Tape<T>) -> ModelParams<Var> {
        let frozen = self.config.fixed_gamma;
        self.params.map(|name, t| {
            if frozen && is_gamma(name) {
                tape.constant(t.clone())
            } else {
                tape.param(t.clone())
            }
        })
    }

    /// Forward pass over all target nodes in batches of `batch_size`
    /// (`0` means one batch). Batches run in parallel and are merged in row
    /// order.
    pub fn forward(
        &self,
        cache: &MessageCache,
        batch_size: usize,
    ) -> Result<ModelOutput<T>, ModelError> {
        self.check_cache(cache)?;
        let n = cache.num_target();
        let bs = if batch_size == 0 {
            n.max(1)
        } else {
            batch_size
        };
        let batches: Vec<Vec<usize>> = (0..n)
            .step_by(bs)
            .map(|s| (s..(s + bs).min(n)).collect())
            .collect();
        let heads = self.config.heads;
        let results = batches
            .par_iter()
            .map(|rows| {
                let owned;
                let part = if rows.len() == n {
                    cache
                } else {
                    owned = cache.select_rows(rows);
                    &owned
                };
                let tape = Tape::new();
                let bound = self.bind(&tape);
                let v = forward_on_tape(&tape, part, &bound, heads)?;
                let zero: Vec<usize> = {
                    let pooled = tape.value(v.pooled);
                    let d = pooled.last_dim().max(1);
                    pooled
                        .data()
                        .chunks(d)
                        .enumerate()
                        .filter(|(_, r)| r.iter().all(|x| *x == T::zero()))
                        .map(|(i, _)| rows[i])
                        .collect()
                };
                let grab = |var: Var| tape.value(var).clone();
                Ok(BatchOut {
                    logits: grab(v.logits),
                    coarse: grab(v.coarse_attention),
                    fine: grab(v.fine_attention),
                    beta: grab(v.beta),
                    embeddings: grab(v.embedding),
                    zero,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let (s, h) = (self.layout.num_tokens(), heads);
        let merge = |f: fn(&BatchOut<T>) -> &Tensor<T>, tail: &[usize]| {
            let data = results
                .iter()
                .flat_map(|r| f(r).data().iter().copied())
                .collect();
            let mut shape = vec![n];
            shape.extend_from_slice(tail);
            Tensor::new(shape, data)
        };
        Ok(ModelOutput {
            logits: merge(|r| &r.logits, &[self.layout.num_classes]),
            coarse_attention: merge(|r| &r.coarse, &[h, s, s]),
            fine_attention: merge(|r| &r.fine, &[h, s, s]),
            beta: merge(|r| &r.beta, &[s]),
            embeddings: merge(|r| &r.embeddings, &[self.config.hidden]),
            zero_norm_rows: results
                .iter()
                .flat_map(|r| r.zero.iter().copied())
                .collect(),
        })
    }

    /// Current hop weights: `(path key, is label path, values)`.
    pub fn gamma_values(&self) -> Vec<(String, bool, Vec<f64>)> {
        let a = &self.params.ahc;
        a.feature_gamma
            .iter()
            .map(|(k, g)| (k.clone(), false, g.to_f64()))
            .chain(
                a.label_gamma
                    .iter()
                    .map(|(k, g)| (k.clone(), true, g.to_f64())),
            )
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }
}
