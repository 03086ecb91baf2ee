use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{init_gamma, ModelError};
use crate::autodiff::{Real, Tensor};
use crate::propagate::MessageCache;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    /// Hop-weight initialization parameter, in `(0, 1)`.
    pub alpha_init: f64,
    /// Ablation: every hop weight fixed to 1 and excluded from training.
    pub fixed_gamma: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            heads: 4,
            alpha_init: 0.25,
            fixed_gamma: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(ModelError::Heads {
                hidden: self.hidden,
                heads: self.heads,
            });
        }
        init_gamma(self.alpha_init, 0)?;
        Ok(())
    }
}

/// Which paths the model expects and the input width of every hop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    /// Feature path key -> input width of hops `0..=steps`.
    pub feature_paths: BTreeMap<String, Vec<usize>>,
    /// Label path key -> number of stored hops.
    pub label_paths: BTreeMap<String, usize>,
    pub num_classes: usize,
}

/// Key of the projection applied to hop `hop` of `path`: its first `hop + 1`
/// node types.
pub fn prefix_key(path: &str, hop: usize) -> String {
    path.split('-').take(hop + 1).collect::<Vec<_>>().join("-")
}

impl ModelLayout {
    pub fn from_cache(cache: &MessageCache, num_classes: usize) -> Result<Self, ModelError> {
        if cache.feature_entries.is_empty() && cache.label_entries.is_empty() {
            return Err(ModelError::EmptyCache);
        }
        let feature_paths = cache
            .feature_entries
            .iter()
            .map(|(k, hops)| (k.clone(), hops.iter().map(|h| h.cols()).collect()))
            .collect();
        let mut label_paths = BTreeMap::new();
        for (k, hops) in &cache.label_entries {
            if let Some(h) = hops.iter().find(|h| h.cols() != num_classes) {
                return Err(ModelError::InputWidth {
                    key: k.clone(),
                    expected: num_classes,
                    found: h.cols(),
                });
            }
            label_paths.insert(k.clone(), hops.len());
        }
        let layout = Self {
            feature_paths,
            label_paths,
            num_classes,
        };
        layout.prefix_dims()?;
        Ok(layout)
    }

    /// Input width per projection prefix; every path sharing a prefix must
    /// agree on it.
    pub fn prefix_dims(&self) -> Result<BTreeMap<String, usize>, ModelError> {
        let mut dims = BTreeMap::new();
        for (path, hops) in &self.feature_paths {
            for (l, &w) in hops.iter().enumerate() {
                let key = prefix_key(path, l);
                if let Some(&prev) = dims.get(&key) {
                    if prev != w {
                        return Err(ModelError::InputWidth {
                            key,
                            expected: prev,
                            found: w,
                        });
                    }
                }
                dims.insert(key, w);
            }
        }
        Ok(dims)
    }

    /// Feature tokens then label tokens, each in key order.
    pub fn token_keys(&self) -> Vec<String> {
        self.feature_paths
            .keys()
            .cloned()
            .chain(self.label_paths.keys().map(|k| format!("label:{k}")))
            .collect()
    }

    pub fn num_tokens(&self) -> usize {
        self.feature_paths.len() + self.label_paths.len()
    }
}

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: Option<P>,
}

/// Hop weights and projections of the per-path convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct AhcParams<P> {
    /// Path key -> `[steps + 1]` hop weights.
    pub feature_gamma: BTreeMap<String, P>,
    /// Prefix key -> projection shared by every path with that prefix.
    pub feature_projections: BTreeMap<String, Linear<P>>,
    /// Path key -> one weight per stored label hop.
    pub label_gamma: BTreeMap<String, P>,
    /// Path key -> one `C -> d` projection per stored label hop.
    pub label_projections: BTreeMap<String, Vec<Linear<P>>>,
}

/// Bias-free multi-head attention projections.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<P> {
    pub wq: P,
    pub wk: P,
    pub wv: P,
    pub wo: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<P> {
    pub coarse: AttentionParams<P>,
    pub fine: AttentionParams<P>,
    /// Unconstrained scalar; the coarse-level fusion weight is its sigmoid.
    pub gate: P,
    pub classifier: Linear<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P> {
    pub ahc: AhcParams<P>,
    pub fusion: FusionParams<P>,
}

fn map_linear<P, Q>(name: &str, l: &Linear<P>, f: &mut impl FnMut(&str, &P) -> Q) -> Linear<Q> {
    Linear {
        weight: f(&format!("{name}.w"), &l.weight),
        bias: l.bias.as_ref().map(|b| f(&format!("{name}.b"), b)),
    }
}

fn visit_linear<P>(name: &str, l: &mut Linear<P>, f: &mut impl FnMut(&str, &mut P)) {
    f(&format!("{name}.w"), &mut l.weight);
    if let Some(b) = &mut l.bias {
        f(&format!("{name}.b"), b);
    }
}

fn map_attention<P, Q>(
    name: &str,
    a: &AttentionParams<P>,
    f: &mut impl FnMut(&str, &P) -> Q,
) -> AttentionParams<Q> {
    AttentionParams {
        wq: f(&format!("{name}.wq"), &a.wq),
        wk: f(&format!("{name}.wk"), &a.wk),
        wv: f(&format!("{name}.wv"), &a.wv),
        wo: f(&format!("{name}.wo"), &a.wo),
    }
}

fn visit_attention<P>(name: &str, a: &mut AttentionParams<P>, f: &mut impl FnMut(&str, &mut P)) {
    f(&format!("{name}.wq"), &mut a.wq);
    f(&format!("{name}.wk"), &mut a.wk);
    f(&format!("{name}.wv"), &mut a.wv);
    f(&format!("{name}.wo"), &mut a.wo);
}

/// Whether a parameter name refers to a hop-weight vector.
pub fn is_gamma(name: &str) -> bool {
    name.starts_with("ahc.feature.gamma/") || name.starts_with("ahc.label.gamma/")
}

impl<P> ModelParams<P> {
    /// Structure-preserving map; `f` also receives each parameter's stable
    /// name. Names are visited in a fixed order.
    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> ModelParams<Q> {
        let f = &mut f;
        let a = &self.ahc;
        let ahc = AhcParams {
            feature_gamma: a
                .feature_gamma
                .iter()
                .map(|(k, v)| (k.clone(), f(&format!("ahc.feature.gamma/{k}"), v)))
                .collect(),
            feature_projections: a
                .feature_projections
                .iter()
                .map(|(k, l)| {
                    (
                        k.clone(),
                        map_linear(&format!("ahc.feature.proj/{k}"), l, f),
                    )
                })
                .collect(),
            label_gamma: a
                .label_gamma
                .iter()
                .map(|(k, v)| (k.clone(), f(&format!("ahc.label.gamma/{k}"), v)))
                .collect(),
            label_projections: a
                .label_projections
                .iter()
                .map(|(k, hops)| {
                    let mapped = hops
                        .iter()
                        .enumerate()
                        .map(|(h, l)| map_linear(&format!("ahc.label.proj/{k}/{h}"), l, f))
                        .collect();
                    (k.clone(), mapped)
                })
                .collect(),
        };
        let u = &self.fusion;
        let fusion = FusionParams {
            coarse: map_attention("fusion.coarse", &u.coarse, f),
            fine: map_attention("fusion.fine", &u.fine, f),
            gate: f("fusion.gate", &u.gate),
            classifier: map_linear("fusion.classifier", &u.classifier, f),
        };
        ModelParams { ahc, fusion }
    }

    /// Visits every parameter mutably, in the same order as [`ModelParams::map`].
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut P)) {
        let f = &mut f;
        let a = &mut self.ahc;
        for (k, v) in &mut a.feature_gamma {
            f(&format!("ahc.feature.gamma/{k}"), v);
        }
        for (k, l) in &mut a.feature_projections {
            visit_linear(&format!("ahc.feature.proj/{k}"), l, f);
        }
        for (k, v) in &mut a.label_gamma {
            f(&format!("ahc.label.gamma/{k}"), v);
        }
        for (k, hops) in &mut a.label_projections {
            for (h, l) in hops.iter_mut().enumerate() {
                visit_linear(&format!("ahc.label.proj/{k}/{h}"), l, f);
            }
        }
        let u = &mut self.fusion;
        visit_attention("fusion.coarse", &mut u.coarse, f);
        visit_attention("fusion.fine", &mut u.fine, f);
        f("fusion.gate", &mut u.gate);
        visit_linear("fusion.classifier", &mut u.classifier, f);
    }

    /// Every `(name, value)` pair in visiting order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut names = Vec::new();
        self.map(|n, _| names.push(n.to_string()));
        let mut out = Vec::with_capacity(names.len());
        let mut i = 0;
        collect_refs(self, &mut |p| {
            out.push((names[i].clone(), p));
            i += 1;
        });
        out
    }
}

fn collect_refs<'a, P>(params: &'a ModelParams<P>, push: &mut impl FnMut(&'a P)) {
    let a = &params.ahc;
    a.feature_gamma.values().for_each(&mut *push);
    for l in a.feature_projections.values() {
        push(&l.weight);
        if let Some(b) = &l.bias {
            push(b);
        }
    }
    a.label_gamma.values().for_each(&mut *push);
    for hops in a.label_projections.values() {
        for l in hops {
            push(&l.weight);
            if let Some(b) = &l.bias {
                push(b);
            }
        }
    }
    let u = &params.fusion;
    for at in [&u.coarse, &u.fine] {
        push(&at.wq);
        push(&at.wk);
        push(&at.wv);
        push(&at.wo);
    }
    push(&u.gate);
    push(&u.classifier.weight);
    if let Some(b) = &u.classifier.bias {
        push(b);
    }
}

fn glorot<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::of(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data)
}

fn linear<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Linear<Tensor<T>> {
    Linear {
        weight: glorot(rng, fan_in, fan_out),
        bias: Some(Tensor::zeros(vec![fan_out])),
    }
}

fn attention<T: Real>(rng: &mut ChaCha8Rng, d: usize) -> AttentionParams<Tensor<T>> {
    AttentionParams {
        wq: glorot(rng, d, d),
        wk: glorot(rng, d, d),
        wv: glorot(rng, d, d),
        wo: glorot(rng, d, d),
    }
}

fn gamma_tensor<T: Real>(config: &ModelConfig, len: usize) -> Result<Tensor<T>, ModelError> {
    if config.fixed_gamma {
        return Ok(Tensor::full(vec![len], T::one()));
    }
    let g = init_gamma(config.alpha_init, len.saturating_sub(1))?;
    Ok(Tensor::from_f64(vec![len], &g))
}

impl<T: Real> ModelParams<Tensor<T>> {
    /// Glorot-uniform weights, zero biases, hop weights from
    /// [`init_gamma`] and a zero fusion gate.
    pub fn init(config: &ModelConfig, layout: &ModelLayout, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feature_gamma = BTreeMap::new();
        for (k, hops) in &layout.feature_paths {
            feature_gamma.insert(k.clone(), gamma_tensor(config, hops.len())?);
        }
        let feature_projections = layout
            .prefix_dims()?
            .into_iter()
            .map(|(k, w)| (k, linear(&mut rng, w, d)))
            .collect();
        let mut label_gamma = BTreeMap::new();
        let mut label_projections = BTreeMap::new();
        for (k, &hops) in &layout.label_paths {
            label_gamma.insert(k.clone(), gamma_tensor(config, hops)?);
            let projections = (0..hops)
                .map(|_| linear(&mut rng, layout.num_classes, d))
                .collect();
            label_projections.insert(k.clone(), projections);
        }
        let fusion = FusionParams {
            coarse: attention(&mut rng, d),
            fine: attention(&mut rng, d),
            gate: Tensor::zeros(vec![1]),
            classifier: linear(&mut rng, d, layout.num_classes),
        };
        Ok(Self {
            ahc: AhcParams {
                feature_gamma,
                feature_projections,
                label_gamma,
                label_projections,
            },
            fusion,
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<Tensor<U>> {
        self.map(|_, t| t.cast())
    }
}
