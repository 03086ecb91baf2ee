//! Typed heterogeneous graph container.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::DenseMatrix;
use crate::sparse::SparseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("{op}: dimension mismatch {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected {expected} values, found {found}")]
    InvalidShape { expected: usize, found: usize },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("entry ({row}, {col}) outside a {shape:?} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        shape: (usize, usize),
    },
    #[error("invalid CSR structure: {0}")]
    InvalidCsr(String),
    #[error("relation weights must be non-negative")]
    NegativeWeight,
    #[error("unknown node type `{0}`")]
    UnknownType(String),
    #[error("invalid node type name `{0}`")]
    InvalidTypeName(String),
    #[error("duplicate node type `{0}`")]
    DuplicateType(String),
    #[error("relation {src}->{dst} declared twice")]
    DuplicateRelation { src: String, dst: String },
    #[error("relation {src}->{dst} has shape {found:?}, expected {expected:?}")]
    RelationShape {
        src: String,
        dst: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("features of type `{node_type}` have shape {found:?}, expected {expected_rows} rows")]
    FeatureShape {
        node_type: String,
        expected_rows: usize,
        found: (usize, usize),
    },
    #[error("missing features for type `{0}`")]
    MissingFeatures(String),
    #[error("label {label} of node {node} outside [-1, {num_classes})")]
    LabelOutOfRange {
        node: usize,
        label: i64,
        num_classes: usize,
    },
    #[error("{what} has length {found}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Unlabeled marker in [`HeteroGraph::labels`].
pub const UNLABELED: i64 = -1;

/// Owned construction input for [`HeteroGraph::new`].
#[derive(Clone, Debug)]
pub struct GraphParts {
    pub node_types: Vec<String>,
    pub counts: BTreeMap<String, usize>,
    pub features: BTreeMap<String, DenseMatrix>,
    /// Declared (directed) relations. Reverse directions are derived unless
    /// also declared.
    pub relations: Vec<(String, String, SparseMatrix)>,
    pub target_type: String,
    pub labels: Vec<i64>,
    pub num_classes: usize,
    pub splits: Vec<Split>,
    /// Free-form provenance recorded in the manifest.
    pub origin: Option<String>,
}

/// Undirected type-level connectivity derived from the relations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    types: Vec<String>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl Schema {
    pub fn new<S: Into<String>>(
        types: impl IntoIterator<Item = S>,
        edges: impl IntoIterator<Item = (S, S)>,
    ) -> Result<Self, GraphError> {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        let mut adjacency: BTreeMap<String, BTreeSet<String>> =
            types.iter().map(|t| (t.clone(), BTreeSet::new())).collect();
        for (a, b) in edges {
            let (a, b) = (a.into(), b.into());
            for t in [&a, &b] {
                if !adjacency.contains_key(t) {
                    return Err(GraphError::UnknownType(t.clone()));
                }
            }
            adjacency.get_mut(&a).expect("checked").insert(b.clone());
            adjacency.get_mut(&b).expect("checked").insert(a);
        }
        Ok(Self { types, adjacency })
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn contains(&self, t: &str) -> bool {
        self.adjacency.contains_key(t)
    }

    /// Types reachable in one relation step, in sorted order.
    pub fn neighbors(&self, t: &str) -> impl Iterator<Item = &str> {
        self.adjacency
            .get(t)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn connected(&self, a: &str, b: &str) -> bool {
        self.adjacency.get(a).is_some_and(|s| s.contains(b))
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub(crate) struct ManifestRelation {
    pub src: String,
    pub dst: String,
    pub file: String,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub(crate) struct Manifest {
    pub node_types: Vec<String>,
    pub counts: BTreeMap<String, usize>,
    pub feature_dims: BTreeMap<String, usize>,
    pub relations: Vec<ManifestRelation>,
    pub target_type: String,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

pub(crate) fn edge_file_name(src: &str, dst: &str) -> String {
    format!("edges_{src}_{dst}.tsv")
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn valid_type_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    node_types: Vec<String>,
    counts: BTreeMap<String, usize>,
    features: BTreeMap<String, DenseMatrix>,
    relations: BTreeMap<(String, String), SparseMatrix>,
    declared: Vec<(String, String)>,
    target_type: String,
    labels: Vec<i64>,
    num_classes: usize,
    splits: Vec<Split>,
    origin: Option<String>,
    fingerprint: u64,
}

impl HeteroGraph {
    /// Validates the parts and derives reverse relations. The fingerprint is
    /// taken over the canonical manifest serialization.
    pub fn new(parts: GraphParts) -> Result<Self, GraphError> {
        let mut graph = Self::validated(parts)?;
        graph.fingerprint = fnv1a64(&graph.manifest_bytes());
        Ok(graph)
    }

    /// Same as [`HeteroGraph::new`] but with an externally supplied
    /// fingerprint (the loader hashes the manifest file as stored on disk).
    pub(crate) fn with_fingerprint(
        parts: GraphParts,
        fingerprint: u64,
    ) -> Result<Self, GraphError> {
        let mut graph = Self::validated(parts)?;
        graph.fingerprint = fingerprint;
        Ok(graph)
    }

    fn validated(parts: GraphParts) -> Result<Self, GraphError> {
        let GraphParts {
            node_types,
            counts,
            features,
            relations: declared_relations,
            target_type,
            labels,
            num_classes,
            splits,
            origin,
        } = parts;

        let mut seen = BTreeSet::new();
        for t in &node_types {
            if !valid_type_name(t) {
                return Err(GraphError::InvalidTypeName(t.clone()));
            }
            if !seen.insert(t.clone()) {
                return Err(GraphError::DuplicateType(t.clone()));
            }
            if !counts.contains_key(t) {
                return Err(GraphError::UnknownType(t.clone()));
            }
        }
        for t in counts.keys().chain(features.keys()) {
            if !seen.contains(t) {
                return Err(GraphError::UnknownType(t.clone()));
            }
        }
        if !seen.contains(&target_type) {
            return Err(GraphError::UnknownType(target_type));
        }
        for t in &node_types {
            let f = features
                .get(t)
                .ok_or_else(|| GraphError::MissingFeatures(t.clone()))?;
            if f.rows() != counts[t] {
                return Err(GraphError::FeatureShape {
                    node_type: t.clone(),
                    expected_rows: counts[t],
                    found: f.shape(),
                });
            }
            if !f.is_finite() {
                return Err(GraphError::NonFinite {
                    context: format!("features of `{t}`"),
                });
            }
        }

        let mut relations = BTreeMap::new();
        let mut declared = Vec::new();
        for (src, dst, m) in declared_relations {
            for t in [&src, &dst] {
                if !seen.contains(t) {
                    return Err(GraphError::UnknownType(t.clone()));
                }
            }
            let expected = (counts[&src], counts[&dst]);
            if m.shape() != expected {
                return Err(GraphError::RelationShape {
                    src,
                    dst,
                    expected,
                    found: m.shape(),
                });
            }
            let key = (src.clone(), dst.clone());
            if declared.contains(&key) {
                return Err(GraphError::DuplicateRelation { src, dst });
            }
            declared.push(key.clone());
            relations.insert(key, m);
        }
        for (src, dst) in &declared {
            let rev = (dst.clone(), src.clone());
            if !relations.contains_key(&rev) {
                let t = relations[&(src.clone(), dst.clone())].transpose();
                relations.insert(rev, t);
            }
        }

        let n_target = counts[&target_type];
        if labels.len() != n_target {
            return Err(GraphError::LengthMismatch {
                what: "labels",
                expected: n_target,
                found: labels.len(),
            });
        }
        if splits.len() != n_target {
            return Err(GraphError::LengthMismatch {
                what: "splits",
                expected: n_target,
                found: splits.len(),
            });
        }
        for (node, &label) in labels.iter().enumerate() {
            if label < UNLABELED || label >= num_classes as i64 {
                return Err(GraphError::LabelOutOfRange {
                    node,
                    label,
                    num_classes,
                });
            }
        }

        Ok(Self {
            node_types,
            counts,
            features,
            relations,
            declared,
            target_type,
            labels,
            num_classes,
            splits,
            origin,
            fingerprint: 0,
        })
    }

    pub fn node_types(&self) -> &[String] {
        &self.node_types
    }

    pub fn count(&self, t: &str) -> Option<usize> {
        self.counts.get(t).copied()
    }

    pub fn counts(&self) -> &BTreeMap<String, usize> {
        &self.counts
    }

    pub fn features(&self, t: &str) -> Option<&DenseMatrix> {
        self.features.get(t)
    }

    pub fn feature_dim(&self, t: &str) -> Option<usize> {
        self.features.get(t).map(DenseMatrix::cols)
    }

    /// Relation matrix in either direction (reverse directions are derived).
    pub fn relation(&self, src: &str, dst: &str) -> Option<&SparseMatrix> {
        self.relations.get(&(src.to_string(), dst.to_string()))
    }

    /// The relations as declared, in declaration order.
    pub fn declared_relations(&self) -> impl Iterator<Item = (&str, &str, &SparseMatrix)> {
        self.declared.iter().map(move |(s, d)| {
            (
                s.as_str(),
                d.as_str(),
                &self.relations[&(s.clone(), d.clone())],
            )
        })
    }

    pub fn target_type(&self) -> &str {
        &self.target_type
    }

    pub fn num_target(&self) -> usize {
        self.counts[&self.target_type]
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn origin(&self) -> Option<&str> {
        self.origin.as_deref()
    }

    /// Target node indices tagged with `split`, ascending.
    pub fn split_nodes(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// FNV-1a hash of the manifest bytes this graph was loaded from (or of
    /// its canonical manifest when built in memory).
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn schema(&self) -> Schema {
        Schema::new(
            self.node_types.iter().cloned(),
            self.declared.iter().cloned(),
        )
        .expect("relation types validated at construction")
    }

    pub(crate) fn manifest(&self) -> Manifest {
        Manifest {
            node_types: self.node_types.clone(),
            counts: self.counts.clone(),
            feature_dims: self
                .features
                .iter()
                .map(|(t, f)| (t.clone(), f.cols()))
                .collect(),
            relations: self
                .declared
                .iter()
                .map(|(s, d)| ManifestRelation {
                    src: s.clone(),
                    dst: d.clone(),
                    file: edge_file_name(s, d),
                })
                .collect(),
            target_type: self.target_type.clone(),
            num_classes: self.num_classes,
            origin: self.origin.clone(),
        }
    }

    /// Canonical manifest serialization, as written by `save_dataset`.
    pub fn manifest_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest()).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Decomposes back into owned parts (declared relations only).
    pub fn into_parts(self) -> GraphParts {
        let mut relations_map = self.relations;
        let relations = self
            .declared
            .into_iter()
            .map(|(s, d)| {
                let m = relations_map
                    .remove(&(s.clone(), d.clone()))
                    .expect("declared relation stored");
                (s, d, m)
            })
            .collect();
        GraphParts {
            node_types: self.node_types,
            counts: self.counts,
            features: self.features,
            relations,
            target_type: self.target_type,
            labels: self.labels,
            num_classes: self.num_classes,
            splits: self.splits,
            origin: self.origin,
        }
    }
}
