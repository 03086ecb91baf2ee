//! Random typed graphs and brute-force oracles shared by the integration
//! tests and the acceptance run.
#![allow(dead_code)]

pub mod prims;

use std::collections::{BTreeMap, BTreeSet};

use ahgnn::graph::UNLABELED;
use ahgnn::{DenseMatrix, GraphParts, HeteroGraph, SparseMatrix, Split};
use rand::Rng;

/// At most three types and 30 nodes; integer weights; some labels missing.
pub fn random_typed_graph(rng: &mut impl Rng) -> HeteroGraph {
    let names = ["A", "B", "C"];
    let k = rng.random_range(1..=3);
    let types: Vec<String> = names[..k].iter().map(|s| s.to_string()).collect();
    let counts: BTreeMap<String, usize> = types
        .iter()
        .map(|t| (t.clone(), rng.random_range(2..=10)))
        .collect();
    let features = types
        .iter()
        .map(|t| {
            let d = rng.random_range(1..=3);
            let data = (0..counts[t] * d)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            (
                t.clone(),
                DenseMatrix::from_vec(counts[t], d, data).unwrap(),
            )
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for a in 0..k {
        for b in a..k {
            if (a == b && (k == 1 || rng.random_bool(0.3)))
                || (a != b && (b == a + 1 || rng.random_bool(0.5)))
            {
                pairs.push((a, b));
            }
        }
    }
    let relations = pairs
        .into_iter()
        .map(|(a, b)| {
            let (ra, rb) = (counts[&types[a]], counts[&types[b]]);
            let density = rng.random_range(0.1..0.6);
            let mut t = Vec::new();
            for i in 0..ra {
                for j in 0..rb {
                    if (a != b || i < j) && rng.random_bool(density) {
                        let w = rng.random_range(1..=3) as f64;
                        t.push((i, j, w));
                        if a == b {
                            t.push((j, i, w));
                        }
                    }
                }
            }
            (
                types[a].clone(),
                types[b].clone(),
                SparseMatrix::from_triplets(ra, rb, &t).unwrap(),
            )
        })
        .collect();
    let n = counts["A"];
    let classes = rng.random_range(1..=4);
    let labels = (0..n)
        .map(|_| {
            if rng.random_bool(0.15) {
                UNLABELED
            } else {
                rng.random_range(0..classes) as i64
            }
        })
        .collect();
    let splits = (0..n)
        .map(|_| [Split::Train, Split::Val, Split::Test][rng.random_range(0..3)])
        .collect();
    HeteroGraph::new(GraphParts {
        node_types: types,
        counts,
        features,
        relations,
        target_type: "A".into(),
        labels,
        num_classes: classes,
        splits,
        origin: None,
    })
    .unwrap()
}

/// Type sequences of every schema walk from `start` with at most `max_len`
/// steps ending at `end`, found by plain recursion over the declared pairs.
pub fn schema_walks(
    graph: &HeteroGraph,
    start: &str,
    max_len: usize,
    end: Option<&str>,
) -> BTreeSet<Vec<String>> {
    let mut adj: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (s, d, _) in graph.declared_relations() {
        adj.entry(s.to_string()).or_default().insert(d.to_string());
        adj.entry(d.to_string()).or_default().insert(s.to_string());
    }
    fn go(
        adj: &BTreeMap<String, BTreeSet<String>>,
        walk: &mut Vec<String>,
        left: usize,
        end: Option<&str>,
        out: &mut BTreeSet<Vec<String>>,
    ) {
        if end.is_none_or(|e| walk.last().unwrap() == e) {
            out.insert(walk.clone());
        }
        if left == 0 {
            return;
        }
        let next: Vec<String> = adj
            .get(walk.last().unwrap())
            .into_iter()
            .flatten()
            .cloned()
            .collect();
        for t in next {
            walk.push(t);
            go(adj, walk, left - 1, end, out);
            walk.pop();
        }
    }
    let mut out = BTreeSet::new();
    go(&adj, &mut vec![start.to_string()], max_len, end, &mut out);
    out
}

/// Weight of one relation step `src[i] -> dst[j]` straight from the declared
/// triplets (reverse steps read the declared matrix transposed).
fn step_weight(graph: &HeteroGraph, src: &str, dst: &str) -> BTreeMap<(usize, usize), f64> {
    let mut w = BTreeMap::new();
    for (s, d, m) in graph.declared_relations() {
        if s == src && d == dst {
            for (r, c, v) in m.iter() {
                w.insert((r, c), v);
            }
            return w;
        }
    }
    for (s, d, m) in graph.declared_relations() {
        if s == dst && d == src {
            for (r, c, v) in m.iter() {
                w.insert((c, r), v);
            }
        }
    }
    w
}

/// Induced adjacency by enumerating node-level walks along `types`.
pub fn walk_adjacency(graph: &HeteroGraph, types: &[String]) -> BTreeMap<(usize, usize), f64> {
    let steps: Vec<BTreeMap<(usize, usize), f64>> = types
        .windows(2)
        .map(|w| step_weight(graph, &w[0], &w[1]))
        .collect();
    let mut out = BTreeMap::new();
    fn walk(
        steps: &[BTreeMap<(usize, usize), f64>],
        depth: usize,
        node: usize,
        weight: f64,
        start: usize,
        out: &mut BTreeMap<(usize, usize), f64>,
    ) {
        if depth == steps.len() {
            *out.entry((start, node)).or_insert(0.0) += weight;
            return;
        }
        for (&(r, c), &w) in &steps[depth] {
            if r == node {
                walk(steps, depth + 1, c, weight * w, start, out);
            }
        }
    }
    let n = graph.count(&types[0]).unwrap();
    for i in 0..n {
        walk(&steps, 0, i, 1.0, i, &mut out);
    }
    out.retain(|_, v| *v != 0.0);
    out
}

/// `(same, edges)` over labeled off-diagonal entries.
pub fn scan_counts(adj: &BTreeMap<(usize, usize), f64>, labels: &[i64]) -> (usize, usize) {
    let mut same = 0;
    let mut edges = 0;
    for &(i, j) in adj.keys() {
        if i != j && labels[i] != UNLABELED && labels[j] != UNLABELED {
            edges += 1;
            same += usize::from(labels[i] == labels[j]);
        }
    }
    (same, edges)
}

/// Per-node ratios by edge scan.
pub fn scan_local(adj: &BTreeMap<(usize, usize), f64>, labels: &[i64]) -> Vec<Option<f64>> {
    (0..labels.len())
        .map(|i| {
            if labels[i] == UNLABELED {
                return None;
            }
            let (mut same, mut total) = (0, 0);
            for &(a, j) in adj.keys() {
                if a == i && j != i && labels[j] != UNLABELED {
                    total += 1;
                    same += usize::from(labels[j] == labels[i]);
                }
            }
            (total > 0).then(|| same as f64 / total as f64)
        })
        .collect()
}

/// Checks paths, adjacencies and homophily of one graph against the
/// oracles. Returns a description of the first mismatch.
pub fn check_homophily_oracles(graph: &HeteroGraph, max_len: usize) -> Result<(), String> {
    use ahgnn::metapath::{global_homophily, homophily_report, local_homophily};
    let want = schema_walks(graph, "A", max_len, Some("A"));
    let got: BTreeSet<Vec<String>> =
        ahgnn::enumerate_metapaths(&graph.schema(), "A", max_len, Some("A"))
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|p| p.types().to_vec())
            .collect();
    if want != got {
        return Err(format!("paths differ: {want:?} vs {got:?}"));
    }
    let report = homophily_report(graph, max_len).map_err(|e| e.to_string())?;
    let mut ratios = Vec::new();
    for p in &report.paths {
        let oracle = walk_adjacency(graph, p.path.types());
        let adj = ahgnn::induced_adjacency(graph, &p.path, false).map_err(|e| e.to_string())?;
        let mine: BTreeMap<(usize, usize), f64> = adj.iter().map(|(r, c, v)| ((r, c), v)).collect();
        if mine != oracle {
            return Err(format!("adjacency of {} differs", p.path.key()));
        }
        let (same, edges) = scan_counts(&oracle, graph.labels());
        let g = global_homophily(&adj, graph.labels()).map_err(|e| e.to_string())?;
        let expect = (edges > 0).then(|| same as f64 / edges as f64);
        if g.ratio() != expect || g != p.global {
            return Err(format!(
                "global ratio of {} is {:?}, oracle {expect:?}",
                p.path.key(),
                g.ratio()
            ));
        }
        if let Some(r) = expect {
            ratios.push(r);
        }
        let local = local_homophily(&adj, graph.labels()).map_err(|e| e.to_string())?;
        if local != scan_local(&oracle, graph.labels()) || local != p.local {
            return Err(format!("local ratios of {} differ", p.path.key()));
        }
    }
    let level = (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64);
    if level != report.graph_level {
        return Err(format!(
            "graph level {:?} vs oracle {level:?}",
            report.graph_level
        ));
    }
    Ok(())
}
