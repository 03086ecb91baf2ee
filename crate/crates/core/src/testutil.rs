use std::collections::BTreeMap;

use crate::dense::DenseMatrix;
use crate::graph::{GraphParts, HeteroGraph, Split};
use crate::sparse::SparseMatrix;

/// A {0,1,2}, B {0,1}; node A2 is isolated.
pub fn toy_graph() -> HeteroGraph {
    let mut counts = BTreeMap::new();
    counts.insert("A".to_string(), 3);
    counts.insert("B".to_string(), 2);
    let mut features = BTreeMap::new();
    features.insert(
        "A".to_string(),
        DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap(),
    );
    features.insert(
        "B".to_string(),
        DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 4.0]]).unwrap(),
    );
    let ab = SparseMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 1, 1.0)]).unwrap();
    HeteroGraph::new(GraphParts {
        node_types: vec!["A".into(), "B".into()],
        counts,
        features,
        relations: vec![("A".into(), "B".into(), ab)],
        target_type: "A".into(),
        labels: vec![0, 1, 1],
        num_classes: 2,
        splits: vec![Split::Train, Split::Val, Split::Test],
        origin: None,
    })
    .unwrap()
}
