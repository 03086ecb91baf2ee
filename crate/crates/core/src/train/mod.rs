//! Full-batch (or mini-batch) training with Adam and early stopping.

mod adam;
mod check;
mod loss;
mod metrics;
mod report;

pub use adam::{adam_step, AdamState, RejectedStep, BETA1, BETA2, EPSILON};
pub use check::loss_grad_check;
pub use loss::{batch_loss, head_diversity, LossVars};
pub use metrics::{evaluate, f1_scores, Metrics};
pub use report::{beta_csv, beta_means, gamma_csv, metrics_csv};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Real, Tape, Tensor};
use crate::graph::{HeteroGraph, Split, UNLABELED};
use crate::model::{forward_on_tape, Model, ModelConfig, ModelError};
use crate::propagate::{check_cache_matches, MessageCache, PropagateError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no labeled training nodes")]
    NoTrainNodes,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Propagate(#[from] PropagateError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub hidden: usize,
    pub l1: usize,
    pub l2: usize,
    pub alpha_init: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub heads: usize,
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
    pub fixed_gamma: bool,
    /// Target nodes per gradient batch; 0 trains full-batch.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-6,
            max_epochs: 200,
            hidden: 256,
            l1: 3,
            l2: 3,
            alpha_init: 0.25,
            lambda1: 1e-4,
            lambda2: 1e-4,
            heads: 4,
            patience: 30,
            seed: 0,
            precision: Precision::F32,
            fixed_gamma: false,
            batch_size: 0,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            heads: self.heads,
            alpha_init: self.alpha_init,
            fixed_gamma: self.fixed_gamma,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.l1 == 0 || self.l2 == 0 {
            return bad("l1 and l2 must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        self.model_config().validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub cross_entropy: f64,
    pub train_micro: f64,
    pub val_macro: f64,
    pub val_micro: f64,
    /// The optimizer refused this epoch's step (non-finite gradient).
    pub rejected: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    /// The loss became non-finite in this epoch; the best earlier model is
    /// returned.
    Diverged {
        epoch: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters at the best monitored epoch.
    pub model: Model<f64>,
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch completed.
    pub best_epoch: usize,
    pub best_val: Metrics,
    pub stop: StopReason,
}

/// Target rows per split, skipping unlabeled nodes.
pub fn split_rows(graph: &HeteroGraph, split: Split) -> Vec<usize> {
    graph
        .splits()
        .iter()
        .zip(graph.labels())
        .enumerate()
        .filter(|(_, (s, l))| **s == split && **l != UNLABELED)
        .map(|(i, _)| i)
        .collect()
}

struct Batch {
    cache: MessageCache,
    targets: Vec<(usize, usize)>,
    ce_weight: f64,
    reg_weight: f64,
}

fn make_batches(
    graph: &HeteroGraph,
    cache: &MessageCache,
    train: &[usize],
    batch_size: usize,
) -> Vec<Batch> {
    let n = cache.num_target();
    let bs = if batch_size == 0 {
        n.max(1)
    } else {
        batch_size
    };
    let is_train: Vec<bool> = {
        let mut v = vec![false; n];
        train.iter().for_each(|&r| v[r] = true);
        v
    };
    (0..n)
        .step_by(bs)
        .map(|start| {
            let rows: Vec<usize> = (start..(start + bs).min(n)).collect();
            let targets: Vec<(usize, usize)> = rows
                .iter()
                .enumerate()
                .filter(|(_, &r)| is_train[r])
                .map(|(i, &r)| (i, graph.labels()[r] as usize))
                .collect();
            Batch {
                cache: if rows.len() == n {
                    cache.clone()
                } else {
                    cache.select_rows(&rows)
                },
                ce_weight: targets.len() as f64 / train.len() as f64,
                reg_weight: rows.len() as f64 / n as f64,
                targets,
            }
        })
        .collect()
}

type BatchGrads<T> = (f64, f64, BTreeMap<String, Tensor<T>>);

fn batch_gradients<T: Real>(
    model: &Model<T>,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<BatchGrads<T>, TrainError> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let vars = forward_on_tape(&tape, &batch.cache, &bound, config.heads)?;
    let loss = batch_loss(
        &tape,
        &vars,
        config.heads,
        &batch.targets,
        config.lambda1,
        config.lambda2,
        batch.ce_weight,
        batch.reg_weight,
    )?;
    let value = tape.value(loss.total).data()[0].as_f64();
    let ce = loss
        .cross_entropy
        .map_or(0.0, |v| tape.value(v).data()[0].as_f64() * batch.ce_weight);
    if !value.is_finite() {
        return Ok((value, ce, BTreeMap::new()));
    }
    let mut grads = tape.backward(loss.total)?;
    let named = bound
        .named()
        .into_iter()
        .filter_map(|(name, var)| grads.take(*var).map(|g| (name, g)))
        .collect();
    Ok((value, ce, named))
}

/// Trains on `graph` with precomputed `cache`, keeping the parameters with
/// the best validation micro-F1 (training micro-F1 when there is no
/// validation node).
pub fn train(
    graph: &HeteroGraph,
    cache: &MessageCache,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    match config.precision {
        Precision::F32 => train_typed::<f32>(graph, cache, config),
        Precision::F64 => train_typed::<f64>(graph, cache, config),
    }
}

fn train_typed<T: Real>(
    graph: &HeteroGraph,
    cache: &MessageCache,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_cache_matches(cache, graph)?;
    for (what, want, found) in [("L1", config.l1, cache.l1), ("L2", config.l2, cache.l2)] {
        if want != found {
            return Err(PropagateError::Stale {
                what,
                expected: want.to_string(),
                found: found.to_string(),
            }
            .into());
        }
    }
    let train_rows = split_rows(graph, Split::Train);
    if train_rows.is_empty() {
        return Err(TrainError::NoTrainNodes);
    }
    let val_rows = split_rows(graph, Split::Val);
    let mut model = Model::<T>::for_cache(
        config.model_config(),
        cache,
        graph.num_classes(),
        config.seed,
    )?;
    let batches = make_batches(graph, cache, &train_rows, config.batch_size);
    let mut adam = AdamState::new();
    let mut history = Vec::new();
    let mut best: Option<(Model<T>, usize, Metrics, f64)> = None;
    let mut since_best = 0usize;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let parts = batches
            .par_iter()
            .map(|b| batch_gradients(&model, b, config))
            .collect::<Result<Vec<_>, _>>()?;
        let mut loss = 0.0;
        let mut ce = 0.0;
        let mut grads: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for (l, c, g) in parts {
            loss += l;
            ce += c;
            for (name, t) in g {
                match grads.get_mut(&name) {
                    Some(acc) => acc.add_assign(&t),
                    None => {
                        grads.insert(name, t);
                    }
                }
            }
        }
        if !loss.is_finite() {
            stop = StopReason::Diverged { epoch };
            break;
        }
        let rejected = adam_step(
            &mut model.params,
            &grads,
            &mut adam,
            config.lr,
            config.weight_decay,
        )
        .is_err();
        let preds = model.forward(cache, config.batch_size)?.predictions();
        let train_m = evaluate(&preds, graph.labels(), &train_rows);
        let val_m = if val_rows.is_empty() {
            train_m
        } else {
            evaluate(&preds, graph.labels(), &val_rows)
        };
        history.push(EpochRecord {
            epoch,
            loss,
            cross_entropy: ce,
            train_micro: train_m.micro_f1,
            val_macro: val_m.macro_f1,
            val_micro: val_m.micro_f1,
            rejected,
        });
        if best.as_ref().is_none_or(|b| val_m.micro_f1 > b.3) {
            best = Some((model.clone(), epoch, val_m, val_m.micro_f1));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                stop = StopReason::EarlyStop;
                break;
            }
        }
    }
    let (best_model, best_epoch, best_val) = match best {
        Some((m, e, v, _)) => (m, e, v),
        None => (
            model,
            0,
            Metrics {
                macro_f1: 0.0,
                micro_f1: 0.0,
            },
        ),
    };
    Ok(TrainOutcome {
        model: best_model.cast(),
        history,
        best_epoch,
        best_val,
        stop,
    })
}

#[cfg(test)]
mod tests;
