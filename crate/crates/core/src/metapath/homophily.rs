//! Homophily ratios over meta-path induced graphs.
//!
//! Edges are structural: every off-diagonal nonzero of the induced adjacency
//! counts once regardless of path multiplicity. Endpoints labeled `-1` are
//! excluded from numerators and denominators.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::{enumerate_metapaths, AdjacencyCache, MetaPath, MetaPathError};
use crate::graph::{HeteroGraph, UNLABELED};
use crate::sparse::SparseMatrix;

pub const HISTOGRAM_BINS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GlobalHomophily {
    Defined {
        ratio: f64,
        same: usize,
        edges: usize,
    },
    /// No edge joins two labeled nodes.
    NoEdges,
}

impl GlobalHomophily {
    pub fn ratio(&self) -> Option<f64> {
        match *self {
            GlobalHomophily::Defined { ratio, .. } => Some(ratio),
            GlobalHomophily::NoEdges => None,
        }
    }

    pub fn edges(&self) -> usize {
        match *self {
            GlobalHomophily::Defined { edges, .. } => edges,
            GlobalHomophily::NoEdges => 0,
        }
    }
}

fn check(adj: &SparseMatrix, labels: &[i64]) -> Result<(), MetaPathError> {
    if !adj.is_square() {
        return Err(MetaPathError::NotSquare(adj.shape()));
    }
    if labels.len() != adj.rows() {
        return Err(MetaPathError::LabelLength {
            labels: labels.len(),
            nodes: adj.rows(),
        });
    }
    Ok(())
}

/// Off-diagonal neighbors of `i` that carry a label.
fn labeled_neighbors<'a>(
    adj: &'a SparseMatrix,
    labels: &'a [i64],
    i: usize,
) -> impl Iterator<Item = usize> + 'a {
    adj.row(i)
        .0
        .iter()
        .copied()
        .filter(move |&j| j != i && labels[j] != UNLABELED)
}

pub fn global_homophily(
    adj: &SparseMatrix,
    labels: &[i64],
) -> Result<GlobalHomophily, MetaPathError> {
    check(adj, labels)?;
    let (mut same, mut edges) = (0usize, 0usize);
    for i in 0..adj.rows() {
        if labels[i] == UNLABELED {
            continue;
        }
        for j in labeled_neighbors(adj, labels, i) {
            edges += 1;
            if labels[j] == labels[i] {
                same += 1;
            }
        }
    }
    Ok(if edges == 0 {
        GlobalHomophily::NoEdges
    } else {
        GlobalHomophily::Defined {
            ratio: same as f64 / edges as f64,
            same,
            edges,
        }
    })
}

/// Per-node ratio; `None` for unlabeled nodes and nodes without a labeled
/// neighbor.
pub fn local_homophily(
    adj: &SparseMatrix,
    labels: &[i64],
) -> Result<Vec<Option<f64>>, MetaPathError> {
    check(adj, labels)?;
    Ok((0..adj.rows())
        .map(|i| {
            if labels[i] == UNLABELED {
                return None;
            }
            let (mut same, mut total) = (0usize, 0usize);
            for j in labeled_neighbors(adj, labels, i) {
                total += 1;
                same += usize::from(labels[j] == labels[i]);
            }
            (total > 0).then(|| same as f64 / total as f64)
        })
        .collect())
}

/// Equal-width bins over `[0, 1]`, left-inclusive, with 1.0 falling in the
/// last bin. Undefined values are skipped.
pub fn homophily_histogram(local: &[Option<f64>], bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    if bins == 0 {
        return counts;
    }
    for v in local.iter().flatten() {
        let b = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathHomophily {
    pub path: MetaPath,
    pub global: GlobalHomophily,
    pub local: Vec<Option<f64>>,
    pub histogram: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomophilyReport {
    /// Target-to-target meta-paths in canonical key order.
    pub paths: Vec<PathHomophily>,
    /// Mean of the defined global ratios; `None` if none is defined.
    pub graph_level: Option<f64>,
}

impl HomophilyReport {
    /// `metapath,global_h,n_edges,bin0..bin4` plus a final `graph` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metapath,global_h,n_edges");
        let bins = self
            .paths
            .first()
            .map_or(HISTOGRAM_BINS, |p| p.histogram.len());
        for b in 0..bins {
            write!(out, ",bin{b}").expect("write to string");
        }
        out.push('\n');
        let fmt_ratio = |r: Option<f64>| r.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        let mut totals = vec![0usize; bins];
        let mut total_edges = 0;
        for p in &self.paths {
            write!(
                out,
                "{},{},{}",
                p.path.key(),
                fmt_ratio(p.global.ratio()),
                p.global.edges()
            )
            .expect("write to string");
            for (t, c) in totals.iter_mut().zip(&p.histogram) {
                write!(out, ",{c}").expect("write to string");
                *t += c;
            }
            total_edges += p.global.edges();
            out.push('\n');
        }
        write!(out, "graph,{},{}", fmt_ratio(self.graph_level), total_edges)
            .expect("write to string");
        for t in totals {
            write!(out, ",{t}").expect("write to string");
        }
        out.push('\n');
        out
    }
}

/// Homophily of every meta-path that starts and ends at the target type with
/// 1..=`max_len` relation steps. Paths are evaluated in parallel and merged
/// in key order.
pub fn homophily_report(
    graph: &HeteroGraph,
    max_len: usize,
) -> Result<HomophilyReport, MetaPathError> {
    let target = graph.target_type();
    let paths: Vec<MetaPath> = enumerate_metapaths(&graph.schema(), target, max_len, Some(target))?
        .into_iter()
        .filter(|p| p.steps() >= 1)
        .collect();
    let cache = AdjacencyCache::new(graph, false);
    let labels = graph.labels();
    let results: Vec<PathHomophily> = paths
        .into_par_iter()
        .map(|path| {
            let adj = cache.get(&path)?;
            let global = global_homophily(&adj, labels)?;
            let local = local_homophily(&adj, labels)?;
            let histogram = homophily_histogram(&local, HISTOGRAM_BINS);
            Ok(PathHomophily {
                path,
                global,
                local,
                histogram,
            })
        })
        .collect::<Result<_, MetaPathError>>()?;
    let defined: Vec<f64> = results.iter().filter_map(|p| p.global.ratio()).collect();
    let graph_level =
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(HomophilyReport {
        paths: results,
        graph_level,
    })
}

/// Graph-level ratio: the mean global ratio over target-to-target paths of
/// at most `max_len` steps, skipping paths without qualifying edges.
pub fn graph_homophily(graph: &HeteroGraph, max_len: usize) -> Result<f64, MetaPathError> {
    if max_len < 2 {
        return Err(MetaPathError::MaxLenTooSmall {
            min: 2,
            got: max_len,
        });
    }
    homophily_report(graph, max_len)?
        .graph_level
        .ok_or(MetaPathError::NoQualifyingPath(max_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(n: usize, edges: &[(usize, usize)]) -> SparseMatrix {
        let mut t = Vec::new();
        for &(a, b) in edges {
            t.push((a, b, 1.0));
            t.push((b, a, 1.0));
        }
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn uniform_labels_give_one() {
        let adj = sym(3, &[(0, 1), (1, 2)]);
        let g = global_homophily(&adj, &[2, 2, 2]).unwrap();
        assert_eq!(g.ratio(), Some(1.0));
    }

    #[test]
    fn perfect_heterophily_gives_zero() {
        let adj = sym(4, &[(0, 1), (2, 3), (0, 3)]);
        assert_eq!(
            global_homophily(&adj, &[0, 1, 0, 1]).unwrap().ratio(),
            Some(0.0)
        );
    }

    #[test]
    fn path_of_four_counts_directed_nonzeros() {
        let adj = sym(4, &[(0, 1), (1, 2), (2, 3)]);
        let g = global_homophily(&adj, &[0, 0, 1, 1]).unwrap();
        assert_eq!(
            g,
            GlobalHomophily::Defined {
                ratio: 4.0 / 6.0,
                same: 4,
                edges: 6
            }
        );
    }

    #[test]
    fn diagonal_and_unlabeled_are_excluded() {
        let adj = SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 5.0), (0, 1, 1.0), (1, 0, 1.0), (0, 2, 1.0)],
        )
        .unwrap();
        let g = global_homophily(&adj, &[0, 1, -1]).unwrap();
        assert_eq!(g.ratio(), Some(0.0));
        assert_eq!(g.edges(), 2);
        let none = global_homophily(&SparseMatrix::identity(2), &[0, 0]).unwrap();
        assert_eq!(none, GlobalHomophily::NoEdges);
    }

    #[test]
    fn local_ratios() {
        let adj = sym(4, &[(0, 1), (0, 2)]);
        let local = local_homophily(&adj, &[0, 0, 1, 1]).unwrap();
        assert_eq!(local[0], Some(0.5));
        assert_eq!(local[1], Some(1.0));
        assert_eq!(local[3], None);
    }

    #[test]
    fn histogram_cases() {
        assert_eq!(homophily_histogram(&[Some(1.0); 4], 5), vec![0, 0, 0, 0, 4]);
        let spread: Vec<_> = [0.0, 0.2, 0.4, 0.6, 0.8].iter().map(|v| Some(*v)).collect();
        assert_eq!(homophily_histogram(&spread, 5), vec![1, 1, 1, 1, 1]);
        assert_eq!(homophily_histogram(&[], 5), vec![0; 5]);
        assert_eq!(
            homophily_histogram(&[None, Some(0.1)], 5),
            vec![1, 0, 0, 0, 0]
        );
    }

    #[test]
    fn shape_errors() {
        let rect = SparseMatrix::zeros(2, 3);
        assert!(matches!(
            global_homophily(&rect, &[0, 0]),
            Err(MetaPathError::NotSquare(_))
        ));
        assert!(matches!(
            local_homophily(&SparseMatrix::identity(2), &[0]),
            Err(MetaPathError::LabelLength { .. })
        ));
    }
}
