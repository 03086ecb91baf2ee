//! Boolean sparsity patterns of meta-path products, kept as row bitsets so
//! that single-edge moves can be scored cheaply.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{HeteroGraph, UNLABELED};
use crate::metapath::MetaPath;

#[derive(Clone, Debug)]
pub(crate) struct BitMatrix {
    words: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    fn new(rows: usize, cols: usize) -> Self {
        let words = cols.div_ceil(64).max(1);
        Self {
            words,
            bits: vec![0; rows * words],
        }
    }

    fn row(&self, r: usize) -> &[u64] {
        &self.bits[r * self.words..(r + 1) * self.words]
    }

    pub(crate) fn set(&mut self, r: usize, c: usize, on: bool) {
        let w = &mut self.bits[r * self.words + c / 64];
        if on {
            *w |= 1 << (c % 64);
        } else {
            *w &= !(1 << (c % 64));
        }
    }

    pub(crate) fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.words + c / 64] >> (c % 64) & 1 == 1
    }

    pub(crate) fn row_ones(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(r).iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

fn mask(n: usize, pick: impl Fn(usize) -> bool) -> Vec<u64> {
    let mut m = vec![0u64; n.div_ceil(64).max(1)];
    for i in (0..n).filter(|&i| pick(i)) {
        m[i / 64] |= 1 << (i % 64);
    }
    m
}

/// Patterns for every ordered type pair joined by a relation, plus the label
/// masks needed to score target-to-target paths.
pub(crate) struct PatternSet {
    patterns: BTreeMap<(String, String), BitMatrix>,
    mirrored: BTreeSet<(String, String)>,
    paths: Vec<MetaPath>,
    labels: Vec<i64>,
    labeled: Vec<u64>,
    class_masks: Vec<Vec<u64>>,
}

impl PatternSet {
    pub(crate) fn new(graph: &HeteroGraph, paths: Vec<MetaPath>) -> Self {
        let declared: Vec<(String, String)> = graph
            .declared_relations()
            .map(|(s, d, _)| (s.to_string(), d.to_string()))
            .collect();
        let mut patterns = BTreeMap::new();
        for (s, d) in &declared {
            for (a, b) in [(s, d), (d, s)] {
                let rel = graph
                    .relation(a, b)
                    .expect("relation stored in both directions");
                let mut m = BitMatrix::new(rel.rows(), rel.cols());
                for (r, c, _) in rel.iter() {
                    m.set(r, c, true);
                }
                patterns.insert((a.clone(), b.clone()), m);
            }
        }
        let mirrored = declared
            .iter()
            .filter(|(s, d)| s != d && !declared.contains(&(d.clone(), s.clone())))
            .cloned()
            .collect();
        let labels = graph.labels().to_vec();
        let n = labels.len();
        let labeled = mask(n, |i| labels[i] != UNLABELED);
        let class_masks = (0..graph.num_classes())
            .map(|c| mask(n, |i| labels[i] == c as i64))
            .collect();
        Self {
            patterns,
            mirrored,
            paths,
            labels,
            labeled,
            class_masks,
        }
    }

    /// Sets or clears one entry of a declared relation, and of its derived
    /// reverse.
    pub(crate) fn set_edge(&mut self, src: &str, dst: &str, r: usize, c: usize, on: bool) {
        let key = (src.to_string(), dst.to_string());
        self.patterns
            .get_mut(&key)
            .expect("declared relation")
            .set(r, c, on);
        if self.mirrored.contains(&key) {
            let rev = (key.1, key.0);
            self.patterns
                .get_mut(&rev)
                .expect("derived reverse")
                .set(c, r, on);
        }
    }

    pub(crate) fn pattern(&self, src: &str, dst: &str) -> &BitMatrix {
        &self.patterns[&(src.to_string(), dst.to_string())]
    }

    /// `(same, edges)` over labeled off-diagonal pairs of one path.
    fn path_counts(&self, path: &MetaPath) -> (u64, u64) {
        let types = path.types();
        let factors: Vec<&BitMatrix> = types
            .windows(2)
            .map(|w| self.pattern(&w[0], &w[1]))
            .collect();
        let n = self.labels.len();
        let words = n.div_ceil(64).max(1);
        let (mut same, mut edges) = (0u64, 0u64);
        let mut cur: Vec<u64> = Vec::new();
        let mut next: Vec<u64> = Vec::new();
        for i in 0..n {
            let li = self.labels[i];
            if li == UNLABELED {
                continue;
            }
            cur.clear();
            cur.extend_from_slice(factors[0].row(i));
            for f in &factors[1..] {
                next.clear();
                next.resize(f.words, 0);
                for j in ones(&cur) {
                    for (a, b) in next.iter_mut().zip(f.row(j)) {
                        *a |= *b;
                    }
                }
                std::mem::swap(&mut cur, &mut next);
            }
            debug_assert_eq!(cur.len(), words);
            cur[i / 64] &= !(1 << (i % 64));
            let class = &self.class_masks[li as usize];
            for w in 0..words {
                edges += u64::from((cur[w] & self.labeled[w]).count_ones());
                same += u64::from((cur[w] & class[w]).count_ones());
            }
        }
        (same, edges)
    }

    /// Mean of the defined per-path ratios, `None` if no path has a labeled
    /// edge.
    pub(crate) fn graph_homophily(&self) -> Option<f64> {
        let ratios: Vec<f64> = self
            .paths
            .iter()
            .map(|p| self.path_counts(p))
            .filter(|&(_, e)| e > 0)
            .map(|(s, e)| s as f64 / e as f64)
            .collect();
        (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
    }
}

fn ones(words: &[u64]) -> impl Iterator<Item = usize> + '_ {
    words.iter().enumerate().flat_map(|(wi, &w)| {
        let mut w = w;
        std::iter::from_fn(move || {
            if w == 0 {
                return None;
            }
            let b = w.trailing_zeros() as usize;
            w &= w - 1;
            Some(wi * 64 + b)
        })
    })
}
