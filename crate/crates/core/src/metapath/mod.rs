//! Meta-paths over the type schema and the adjacency matrices they induce.

mod homophily;

pub use homophily::{
    global_homophily, graph_homophily, homophily_histogram, homophily_report, local_homophily,
    GlobalHomophily, HomophilyReport, PathHomophily, HISTOGRAM_BINS,
};

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::graph::{GraphError, HeteroGraph, Schema};
use crate::sparse::{normalize_relation, spspmm, SparseMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaPathError {
    #[error("meta-path must contain at least one type")]
    Empty,
    #[error("unknown node type `{0}`")]
    UnknownType(String),
    #[error("no relation between `{from}` and `{to}` in meta-path {path}")]
    InvalidStep {
        path: String,
        from: String,
        to: String,
    },
    #[error("max_len must be at least {min}, got {got}")]
    MaxLenTooSmall { min: usize, got: usize },
    #[error("adjacency must be square over target nodes, got {0:?}")]
    NotSquare((usize, usize)),
    #[error("{labels} labels for a {nodes}-node adjacency")]
    LabelLength { labels: usize, nodes: usize },
    #[error("no target-to-target meta-path of length <= {0} has a qualifying edge")]
    NoQualifyingPath(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Ordered type sequence `T1-T2-...-TL`. Ordering is lexicographic over the
/// type sequence, which coincides with ordering by [`MetaPath::key`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetaPath {
    types: Vec<String>,
}

impl MetaPath {
    pub fn new<S: Into<String>>(types: impl IntoIterator<Item = S>) -> Result<Self, MetaPathError> {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        if types.is_empty() {
            return Err(MetaPathError::Empty);
        }
        Ok(Self { types })
    }

    /// Parses a canonical key such as `"A-B-A"`.
    pub fn parse(key: &str) -> Result<Self, MetaPathError> {
        if key.is_empty() {
            return Err(MetaPathError::Empty);
        }
        Self::new(key.split('-'))
    }

    pub fn key(&self) -> String {
        self.types.join("-")
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    /// Number of relation steps (one less than the number of types).
    pub fn steps(&self) -> usize {
        self.types.len() - 1
    }

    pub fn first(&self) -> &str {
        &self.types[0]
    }

    pub fn last(&self) -> &str {
        self.types.last().expect("non-empty")
    }

    /// The path truncated to its first `steps` relation steps.
    pub fn prefix(&self, steps: usize) -> MetaPath {
        MetaPath {
            types: self.types[..=steps.min(self.steps())].to_vec(),
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), MetaPathError> {
        for t in &self.types {
            if !schema.contains(t) {
                return Err(MetaPathError::UnknownType(t.clone()));
            }
        }
        for w in self.types.windows(2) {
            if !schema.connected(&w[0], &w[1]) {
                return Err(MetaPathError::InvalidStep {
                    path: self.key(),
                    from: w[0].clone(),
                    to: w[1].clone(),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for MetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// All walks over the schema that start at `start` and take at most
/// `max_len` relation steps, optionally keeping only those ending at `end`.
/// Types may repeat. The zero-step path `[start]` is included. Output is
/// sorted lexicographically.
pub fn enumerate_metapaths(
    schema: &Schema,
    start: &str,
    max_len: usize,
    end: Option<&str>,
) -> Result<Vec<MetaPath>, MetaPathError> {
    if max_len < 1 {
        return Err(MetaPathError::MaxLenTooSmall {
            min: 1,
            got: max_len,
        });
    }
    for t in std::iter::once(start).chain(end) {
        if !schema.contains(t) {
            return Err(MetaPathError::UnknownType(t.to_string()));
        }
    }
    let mut out = Vec::new();
    let mut stack = vec![vec![start.to_string()]];
    while let Some(walk) = stack.pop() {
        if walk.len() <= max_len {
            let last = walk.last().expect("non-empty").clone();
            for next in schema.neighbors(&last) {
                let mut w = walk.clone();
                w.push(next.to_string());
                stack.push(w);
            }
        }
        if end.is_none_or(|e| walk.last().map(String::as_str) == Some(e)) {
            out.push(MetaPath { types: walk });
        }
    }
    out.sort();
    Ok(out)
}

/// Induced adjacency `A^P = A^{T1T2} A^{T2T3} ... A^{T(L-1)TL}` without
/// memoization. With `normalized`, each factor is the degree-normalized
/// relation.
pub fn induced_adjacency(
    graph: &HeteroGraph,
    path: &MetaPath,
    normalized: bool,
) -> Result<SparseMatrix, MetaPathError> {
    AdjacencyCache::without_memo(graph, normalized)
        .get(path)
        .map(Arc::unwrap_or_clone)
}

/// Memoized prefix products: `A^{T1..Tk}` is built from `A^{T1..T(k-1)}`.
/// Entries are pure functions of their key, so a racing insert stores the
/// same value.
pub struct AdjacencyCache<'g> {
    graph: &'g HeteroGraph,
    normalized: bool,
    memoize: bool,
    products: Mutex<HashMap<String, Arc<SparseMatrix>>>,
    factors: Mutex<HashMap<(String, String), Arc<SparseMatrix>>>,
}

impl<'g> AdjacencyCache<'g> {
    pub fn new(graph: &'g HeteroGraph, normalized: bool) -> Self {
        Self {
            graph,
            normalized,
            memoize: true,
            products: Mutex::default(),
            factors: Mutex::default(),
        }
    }

    pub fn without_memo(graph: &'g HeteroGraph, normalized: bool) -> Self {
        Self {
            memoize: false,
            ..Self::new(graph, normalized)
        }
    }

    pub fn graph(&self) -> &'g HeteroGraph {
        self.graph
    }

    /// Number of memoized prefix products.
    pub fn len(&self) -> usize {
        self.products.lock().expect("memo poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One relation step, normalized if requested.
    pub fn factor(
        &self,
        src: &str,
        dst: &str,
        path: &MetaPath,
    ) -> Result<Arc<SparseMatrix>, MetaPathError> {
        let key = (src.to_string(), dst.to_string());
        if let Some(m) = self.factors.lock().expect("memo poisoned").get(&key) {
            return Ok(Arc::clone(m));
        }
        let raw = self
            .graph
            .relation(src, dst)
            .ok_or_else(|| MetaPathError::InvalidStep {
                path: path.key(),
                from: src.to_string(),
                to: dst.to_string(),
            })?;
        let m = Arc::new(if self.normalized {
            normalize_relation(raw)?
        } else {
            raw.clone()
        });
        self.factors
            .lock()
            .expect("memo poisoned")
            .insert(key, Arc::clone(&m));
        Ok(m)
    }

    pub fn get(&self, path: &MetaPath) -> Result<Arc<SparseMatrix>, MetaPathError> {
        let key = path.key();
        if self.memoize {
            if let Some(m) = self.products.lock().expect("memo poisoned").get(&key) {
                return Ok(Arc::clone(m));
            }
        }
        let result = if path.steps() == 0 {
            let n = self
                .graph
                .count(path.first())
                .ok_or_else(|| MetaPathError::UnknownType(path.first().to_string()))?;
            Arc::new(SparseMatrix::identity(n))
        } else {
            let types = path.types();
            let step = self.factor(&types[types.len() - 2], path.last(), path)?;
            if path.steps() == 1 {
                step
            } else {
                let head = self.get(&path.prefix(path.steps() - 1))?;
                Arc::new(spspmm(&head, &step)?)
            }
        };
        if self.memoize {
            self.products
                .lock()
                .expect("memo poisoned")
                .insert(key, Arc::clone(&result));
        }
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use crate::graph::{GraphParts, Split};
    use std::collections::BTreeMap;

    fn keys(paths: &[MetaPath]) -> Vec<String> {
        paths.iter().map(MetaPath::key).collect()
    }

    fn ab_schema() -> Schema {
        Schema::new(["A", "B"], [("A", "B")]).unwrap()
    }

    #[test]
    fn enumerate_two_steps() {
        let paths = enumerate_metapaths(&ab_schema(), "A", 2, None).unwrap();
        assert_eq!(keys(&paths), ["A", "A-B", "A-B-A"]);
    }

    #[test]
    fn enumerate_with_end_filter() {
        let paths = enumerate_metapaths(&ab_schema(), "A", 2, Some("A")).unwrap();
        assert_eq!(keys(&paths), ["A", "A-B-A"]);
    }

    #[test]
    fn enumerate_one_step_base_case() {
        let s = Schema::new(["A", "B", "C"], [("A", "B"), ("A", "C")]).unwrap();
        let paths = enumerate_metapaths(&s, "A", 1, None).unwrap();
        assert_eq!(keys(&paths), ["A", "A-B", "A-C"]);
    }

    #[test]
    fn enumerate_errors() {
        assert!(matches!(
            enumerate_metapaths(&ab_schema(), "Z", 2, None),
            Err(MetaPathError::UnknownType(_))
        ));
        assert!(matches!(
            enumerate_metapaths(&ab_schema(), "A", 0, None),
            Err(MetaPathError::MaxLenTooSmall { .. })
        ));
    }

    #[test]
    fn key_round_trip_and_prefix() {
        let p = MetaPath::parse("A-B-C").unwrap();
        assert_eq!(p.steps(), 2);
        assert_eq!(p.prefix(1).key(), "A-B");
        assert_eq!(p.prefix(0).key(), "A");
        assert_eq!(MetaPath::parse(&p.key()).unwrap(), p);
    }

    fn toy() -> HeteroGraph {
        let mut counts = BTreeMap::new();
        counts.insert("A".to_string(), 2);
        counts.insert("B".to_string(), 3);
        counts.insert("C".to_string(), 1);
        let mut features = BTreeMap::new();
        for (t, n) in &counts {
            features.insert(t.clone(), DenseMatrix::zeros(*n, 1));
        }
        let ab =
            SparseMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)]).unwrap();
        HeteroGraph::new(GraphParts {
            node_types: vec!["A".into(), "B".into(), "C".into()],
            counts,
            features,
            relations: vec![
                ("A".into(), "B".into(), ab),
                ("A".into(), "C".into(), SparseMatrix::zeros(2, 1)),
            ],
            target_type: "A".into(),
            labels: vec![0, 1],
            num_classes: 2,
            splits: vec![Split::Train, Split::Train],
            origin: None,
        })
        .unwrap()
    }

    #[test]
    fn induced_aba_counts_paths() {
        let g = toy();
        let aba = induced_adjacency(&g, &MetaPath::parse("A-B-A").unwrap(), false).unwrap();
        assert_eq!(aba.to_dense().as_slice(), &[2.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn one_step_is_raw_relation() {
        let g = toy();
        let ab = induced_adjacency(&g, &MetaPath::parse("A-B").unwrap(), false).unwrap();
        assert_eq!(&ab, g.relation("A", "B").unwrap());
    }

    #[test]
    fn empty_relation_annihilates() {
        let g = toy();
        let aca = induced_adjacency(&g, &MetaPath::parse("A-C-A").unwrap(), false).unwrap();
        assert_eq!(aca.nnz(), 0);
        assert_eq!(aca.shape(), (2, 2));
    }

    #[test]
    fn invalid_step_errors() {
        let g = toy();
        assert!(matches!(
            induced_adjacency(&g, &MetaPath::parse("B-C").unwrap(), false),
            Err(MetaPathError::InvalidStep { .. })
        ));
    }

    #[test]
    fn memo_reuses_prefixes() {
        let g = toy();
        let cache = AdjacencyCache::new(&g, false);
        cache.get(&MetaPath::parse("A-B-A-B").unwrap()).unwrap();
        assert_eq!(cache.len(), 3);
        let direct = induced_adjacency(&g, &MetaPath::parse("A-B-A").unwrap(), false).unwrap();
        assert_eq!(
            *cache.get(&MetaPath::parse("A-B-A").unwrap()).unwrap(),
            direct
        );
    }
}
