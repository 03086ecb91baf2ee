use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pattern::PatternSet;
use super::{SynthError, HOMOPHILY_LEN};
use crate::graph::{HeteroGraph, UNLABELED};
use crate::metapath::{enumerate_metapaths, graph_homophily};
use crate::sparse::SparseMatrix;

/// Chance that a proposal ignores the label heuristic and picks a uniformly
/// random new endpoint.
const EXPLORE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewireSpec {
    pub target_h: f64,
    pub seed: u64,
    /// Proposals, accepted or not.
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for RewireSpec {
    fn default() -> Self {
        Self {
            target_h: 0.5,
            seed: 0,
            max_iterations: 50_000,
            tolerance: 0.03,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RewireOutcome {
    pub graph: HeteroGraph,
    pub initial_h: f64,
    /// Recomputed on the output graph.
    pub achieved_h: f64,
    pub converged: bool,
    pub iterations: usize,
    pub accepted: usize,
    /// Graph homophily before the first and after every accepted move.
    pub trajectory: Vec<f64>,
}

/// Which endpoint of a relation belongs to the target type.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Src,
    Dst,
    Both,
}

struct Edges {
    src: String,
    dst: String,
    rows: usize,
    cols: usize,
    side: Side,
    edges: Vec<(usize, usize, f64)>,
}

/// Classes of the labeled target nodes, and the nodes of each class.
struct Classes<'a> {
    labels: &'a [i64],
    members: Vec<Vec<usize>>,
    labeled: Vec<usize>,
}

impl Classes<'_> {
    fn pick_same(&self, rng: &mut ChaCha8Rng, class: usize) -> Option<usize> {
        let m = &self.members[class];
        (!m.is_empty()).then(|| m[rng.random_range(0..m.len())])
    }

    fn pick_other(&self, rng: &mut ChaCha8Rng, class: usize) -> Option<usize> {
        let others = self.labeled.len() - self.members[class].len();
        if others == 0 {
            return None;
        }
        let mut k = rng.random_range(0..others);
        for (c, m) in self.members.iter().enumerate() {
            if c == class {
                continue;
            }
            if k < m.len() {
                return Some(m[k]);
            }
            k -= m.len();
        }
        unreachable!("k indexes the other classes")
    }
}

/// Moves target-side endpoints of target-incident relations until the
/// graph-level homophily is within tolerance of the request.
///
/// Every relation keeps its edge count and each accepted move brings the
/// homophily strictly closer to the target without overshooting it (except
/// by landing inside the tolerance), so the trajectory is monotone. The input
/// graph is not modified.
pub fn rewire_to_homophily(
    graph: &HeteroGraph,
    spec: &RewireSpec,
) -> Result<RewireOutcome, SynthError> {
    if !(0.0..=1.0).contains(&spec.target_h) {
        return Err(SynthError::TargetOutOfRange(spec.target_h));
    }
    if !(spec.tolerance.is_finite() && spec.tolerance > 0.0) {
        return Err(SynthError::Spec(format!(
            "tolerance must be positive, got {}",
            spec.tolerance
        )));
    }
    let target = graph.target_type().to_string();
    let labels = graph.labels();
    let mut members = vec![Vec::new(); graph.num_classes()];
    for (i, &l) in labels.iter().enumerate() {
        if l != UNLABELED {
            members[l as usize].push(i);
        }
    }
    let classes = Classes {
        labels,
        labeled: members.iter().flatten().copied().collect(),
        members,
    };
    if classes.labeled.is_empty() {
        return Err(SynthError::NoLabels);
    }

    let mut rels: Vec<Edges> = graph
        .declared_relations()
        .filter(|(s, d, _)| *s == target || *d == target)
        .map(|(s, d, m)| Edges {
            src: s.to_string(),
            dst: d.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            side: match (s == target, d == target) {
                (true, true) => Side::Both,
                (true, false) => Side::Src,
                _ => Side::Dst,
            },
            edges: m.iter().collect(),
        })
        .collect();
    let total: usize = rels.iter().map(|r| r.edges.len()).sum();
    if total == 0 {
        return Err(SynthError::NoTargetEdges);
    }

    let paths = enumerate_metapaths(&graph.schema(), &target, HOMOPHILY_LEN, Some(&target))?
        .into_iter()
        .filter(|p| p.steps() >= 1)
        .collect();
    let mut patterns = PatternSet::new(graph, paths);
    let initial_h = patterns
        .graph_homophily()
        .ok_or(SynthError::NoTargetEdges)?;
    let mut h = initial_h;
    let mut trajectory = vec![h];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = graph.num_target();
    let (mut iterations, mut accepted) = (0, 0);

    while iterations < spec.max_iterations && (h - spec.target_h).abs() > spec.tolerance {
        iterations += 1;
        let up = h < spec.target_h;
        let (ri, ei) = {
            let mut k = rng.random_range(0..total);
            let ri = rels.iter().position(|r| {
                let hit = k < r.edges.len();
                if !hit {
                    k -= r.edges.len();
                }
                hit
            });
            (ri.expect("k < total"), k)
        };
        let rel = &rels[ri];
        let (r, c, w) = rel.edges[ei];
        let move_src = match rel.side {
            Side::Src => true,
            Side::Dst => false,
            Side::Both => rng.random_bool(0.5),
        };
        let (old, anchor, anchor_type) = if move_src {
            (r, c, &rel.dst)
        } else {
            (c, r, &rel.src)
        };

        let reference = {
            let near: Vec<usize> = patterns
                .pattern(anchor_type, &target)
                .row_ones(anchor)
                .filter(|&t| t != old && classes.labels[t] != UNLABELED)
                .collect();
            (!near.is_empty())
                .then(|| classes.labels[near[rng.random_range(0..near.len())]] as usize)
        };
        let fresh = match reference {
            Some(class) if !rng.random_bool(EXPLORE) => {
                if up {
                    classes.pick_same(&mut rng, class)
                } else {
                    classes.pick_other(&mut rng, class)
                }
            }
            _ => Some(rng.random_range(0..n)),
        };
        let Some(fresh) = fresh.filter(|&t| t != old) else {
            continue;
        };
        let (nr, nc) = if move_src { (fresh, c) } else { (r, fresh) };
        if (rel.side == Side::Both && nr == nc) || patterns.pattern(&rel.src, &rel.dst).get(nr, nc)
        {
            continue;
        }

        let (src, dst) = (rel.src.clone(), rel.dst.clone());
        patterns.set_edge(&src, &dst, r, c, false);
        patterns.set_edge(&src, &dst, nr, nc, true);
        let candidate = patterns.graph_homophily();
        let better = candidate.is_some_and(|next| {
            let gap = (next - spec.target_h).abs();
            if up {
                next > h && (next <= spec.target_h || gap <= spec.tolerance)
            } else {
                next < h && (next >= spec.target_h || gap <= spec.tolerance)
            }
        });
        if better {
            h = candidate.expect("checked");
            trajectory.push(h);
            accepted += 1;
            rels[ri].edges[ei] = (nr, nc, w);
        } else {
            patterns.set_edge(&src, &dst, nr, nc, false);
            patterns.set_edge(&src, &dst, r, c, true);
        }
    }

    let mut parts = graph.clone().into_parts();
    for rel in &rels {
        let m = SparseMatrix::from_triplets(rel.rows, rel.cols, &rel.edges)?;
        let slot = parts
            .relations
            .iter_mut()
            .find(|(s, d, _)| *s == rel.src && *d == rel.dst)
            .expect("relation came from this graph");
        slot.2 = m;
    }
    parts.origin = Some(format!(
        "{} rewired to h={} (seed {})",
        graph.origin().unwrap_or("graph"),
        spec.target_h,
        spec.seed
    ));
    let out = HeteroGraph::new(parts)?;
    let achieved_h = graph_homophily(&out, HOMOPHILY_LEN)?;
    Ok(RewireOutcome {
        graph: out,
        initial_h,
        converged: (achieved_h - spec.target_h).abs() <= spec.tolerance,
        achieved_h,
        iterations,
        accepted,
        trajectory,
    })
}
