//! One-time message propagation along meta-paths.
//!
//! For a meta-path `T1-...-TL` rooted at the target type, hop `l` is
//! `Â^{T1..T(l+1)} X^{T(l+1)}` (hop 0 is the raw target features). Label
//! messages diffuse the one-hot training labels instead of features and only
//! exist at hops whose prefix ends back at the target type; hop 0 is never
//! stored for labels.

mod cache;

pub use cache::{
    decode_cache, encode_cache, read_cache, read_cache_checked, write_cache, CacheExpectation,
};

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use thiserror::Error;

use crate::dense::DenseMatrix;
use crate::graph::{GraphError, HeteroGraph, Split, UNLABELED};
use crate::metapath::{enumerate_metapaths, AdjacencyCache, MetaPath, MetaPathError};
use crate::sparse::spmm;

#[derive(Debug, Error)]
pub enum PropagateError {
    #[error("propagation depth must be at least 1")]
    ZeroDepth,
    #[error("feature dimension mismatch at type `{node_type}` on meta-path {path}")]
    FeatureDim { node_type: String, path: String },
    #[error("label messages need at least one labeled training node")]
    NoTrainNodes,
    #[error("cache has {found} classes, graph declares {expected}")]
    ClassMismatch { expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cache format error: {0}")]
    Format(String),
    #[error("cache file truncated")]
    Truncated,
    #[error(
        "stale cache: {what} is {found}, expected {expected}; rerun `precompute` to regenerate it"
    )]
    Stale {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    MetaPath(#[from] MetaPathError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Key prefix distinguishing label entries from feature entries on disk.
pub const LABEL_KEY_PREFIX: &str = "label:";

/// Precomputed hop messages for every meta-path rooted at the target type.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageCache {
    pub l1: usize,
    pub l2: usize,
    pub fingerprint: u64,
    /// Path key -> hops `0..=steps`.
    pub feature_entries: BTreeMap<String, Vec<DenseMatrix>>,
    /// Path key -> one matrix per prefix ending at the target type.
    pub label_entries: BTreeMap<String, Vec<DenseMatrix>>,
}

impl MessageCache {
    pub fn num_target(&self) -> usize {
        self.feature_entries
            .values()
            .chain(self.label_entries.values())
            .flat_map(|h| h.first())
            .map(DenseMatrix::rows)
            .next()
            .unwrap_or(0)
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.label_entries
            .values()
            .flat_map(|h| h.first())
            .map(DenseMatrix::cols)
            .next()
    }

    pub fn expectation(&self) -> CacheExpectation {
        CacheExpectation {
            fingerprint: self.fingerprint,
            l1: self.l1,
            l2: self.l2,
        }
    }

    /// Every matrix restricted to the given target rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> MessageCache {
        let pick = |m: &BTreeMap<String, Vec<DenseMatrix>>| {
            m.iter()
                .map(|(k, hops)| {
                    (
                        k.clone(),
                        hops.iter().map(|h| h.select_rows(rows)).collect(),
                    )
                })
                .collect()
        };
        MessageCache {
            l1: self.l1,
            l2: self.l2,
            fingerprint: self.fingerprint,
            feature_entries: pick(&self.feature_entries),
            label_entries: pick(&self.label_entries),
        }
    }
}

/// Relation-step counts at which a label path's prefix returns to `target`.
pub fn label_hop_steps(path: &MetaPath, target: &str) -> Vec<usize> {
    path.types()
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, t)| t.as_str() == target)
        .map(|(i, _)| i)
        .collect()
}

/// Feature paths: rooted at the target with 1..=`l1` steps.
pub fn feature_paths(graph: &HeteroGraph, l1: usize) -> Result<Vec<MetaPath>, PropagateError> {
    if l1 == 0 {
        return Err(PropagateError::ZeroDepth);
    }
    Ok(
        enumerate_metapaths(&graph.schema(), graph.target_type(), l1, None)?
            .into_iter()
            .filter(|p| p.steps() >= 1)
            .collect(),
    )
}

/// Label paths: target-to-target with 1..=`l2` steps.
pub fn label_paths(graph: &HeteroGraph, l2: usize) -> Result<Vec<MetaPath>, PropagateError> {
    if l2 == 0 {
        return Err(PropagateError::ZeroDepth);
    }
    let target = graph.target_type();
    Ok(
        enumerate_metapaths(&graph.schema(), target, l2, Some(target))?
            .into_iter()
            .filter(|p| p.steps() >= 1)
            .collect(),
    )
}

enum Seed<'a> {
    Features,
    Labels(&'a DenseMatrix),
}

/// Right-to-left message memo: `msg(T1..Tk) = Â^{T1T2} msg(T2..Tk)`, seeded
/// at the last type. Every sub-walk is computed once and only with
/// sparse-dense products, so cost stays linear in relation nnz.
struct MessageMemo<'g, 's> {
    factors: AdjacencyCache<'g>,
    seed: Seed<'s>,
    memo: Mutex<HashMap<String, Arc<DenseMatrix>>>,
}

impl<'g, 's> MessageMemo<'g, 's> {
    fn new(graph: &'g HeteroGraph, seed: Seed<'s>) -> Self {
        Self {
            factors: AdjacencyCache::new(graph, true),
            seed,
            memo: Mutex::default(),
        }
    }

    fn message(
        &self,
        walk: &[String],
        path: &MetaPath,
    ) -> Result<Arc<DenseMatrix>, PropagateError> {
        let key = walk.join("-");
        if let Some(m) = self.memo.lock().expect("memo poisoned").get(&key) {
            return Ok(Arc::clone(m));
        }
        let graph = self.factors.graph();
        let result = if walk.len() == 1 {
            let t = &walk[0];
            match self.seed {
                Seed::Features => Arc::new(
                    graph
                        .features(t)
                        .ok_or_else(|| PropagateError::FeatureDim {
                            node_type: t.clone(),
                            path: path.key(),
                        })?
                        .clone(),
                ),
                Seed::Labels(y) => {
                    if t != graph.target_type() {
                        return Err(PropagateError::FeatureDim {
                            node_type: t.clone(),
                            path: path.key(),
                        });
                    }
                    Arc::new(y.clone())
                }
            }
        } else {
            let step = self.factors.factor(&walk[0], &walk[1], path)?;
            let tail = self.message(&walk[1..], path)?;
            Arc::new(spmm(&step, &tail).map_err(|_| PropagateError::FeatureDim {
                node_type: walk[1].clone(),
                path: path.key(),
            })?)
        };
        self.memo
            .lock()
            .expect("memo poisoned")
            .insert(key, Arc::clone(&result));
        Ok(result)
    }
}

/// Feature hops `0..=steps` for every feature path with at most `l1` steps.
pub fn propagate_features(
    graph: &HeteroGraph,
    l1: usize,
) -> Result<BTreeMap<String, Vec<DenseMatrix>>, PropagateError> {
    let paths = feature_paths(graph, l1)?;
    let memo = MessageMemo::new(graph, Seed::Features);
    let entries: Vec<(String, Vec<DenseMatrix>)> = paths
        .par_iter()
        .map(|path| {
            let hops = (0..=path.steps())
                .map(|l| {
                    memo.message(&path.types()[..=l], path)
                        .map(|m| (*m).clone())
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((path.key(), hops))
        })
        .collect::<Result<_, PropagateError>>()?;
    Ok(entries.into_iter().collect())
}

/// One-hot rows for labeled training nodes, zero rows elsewhere.
pub fn train_label_matrix(graph: &HeteroGraph) -> Result<DenseMatrix, PropagateError> {
    let c = graph.num_classes();
    let mut y = DenseMatrix::zeros(graph.num_target(), c);
    let mut any = false;
    for (i, (&label, &split)) in graph.labels().iter().zip(graph.splits()).enumerate() {
        if split == Split::Train && label != UNLABELED {
            y.set(i, label as usize, 1.0);
            any = true;
        }
    }
    if !any {
        return Err(PropagateError::NoTrainNodes);
    }
    Ok(y)
}

/// Label messages for every target-to-target path with at most `l2` steps.
pub fn propagate_labels(
    graph: &HeteroGraph,
    l2: usize,
) -> Result<BTreeMap<String, Vec<DenseMatrix>>, PropagateError> {
    let paths = label_paths(graph, l2)?;
    let y = train_label_matrix(graph)?;
    let memo = MessageMemo::new(graph, Seed::Labels(&y));
    let target = graph.target_type();
    let entries: Vec<(String, Vec<DenseMatrix>)> = paths
        .par_iter()
        .map(|path| {
            let hops = label_hop_steps(path, target)
                .into_iter()
                .map(|l| {
                    memo.message(&path.types()[..=l], path)
                        .map(|m| (*m).clone())
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((path.key(), hops))
        })
        .collect::<Result<_, PropagateError>>()?;
    Ok(entries.into_iter().collect())
}

/// Feature and label messages together, stamped with the graph fingerprint.
pub fn precompute(
    graph: &HeteroGraph,
    l1: usize,
    l2: usize,
) -> Result<MessageCache, PropagateError> {
    Ok(MessageCache {
        l1,
        l2,
        fingerprint: graph.fingerprint(),
        feature_entries: propagate_features(graph, l1)?,
        label_entries: propagate_labels(graph, l2)?,
    })
}

/// Checks that a cache was built for `graph` and has the expected class count.
pub fn check_cache_matches(
    cache: &MessageCache,
    graph: &HeteroGraph,
) -> Result<(), PropagateError> {
    if cache.fingerprint != graph.fingerprint() {
        return Err(PropagateError::Stale {
            what: "dataset fingerprint",
            expected: format!("{:016x}", graph.fingerprint()),
            found: format!("{:016x}", cache.fingerprint),
        });
    }
    if let Some(c) = cache.num_classes() {
        if c != graph.num_classes() {
            return Err(PropagateError::ClassMismatch {
                expected: graph.num_classes(),
                found: c,
            });
        }
    }
    Ok(())
}
