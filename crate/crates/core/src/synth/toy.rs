use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::rewire::{rewire_to_homophily, RewireSpec};
use super::{SynthError, HOMOPHILY_LEN};
use crate::dense::DenseMatrix;
use crate::graph::{GraphParts, HeteroGraph, Split};
use crate::metapath::graph_homophily;
use crate::sparse::SparseMatrix;

pub const TARGET_TYPE: &str = "A";
pub const LINK_TYPE: &str = "P";
pub const THIRD_TYPE: &str = "V";

/// A planted-partition graph: target nodes `A` with class labels, link nodes
/// `P` joining a few targets each, and optionally venue nodes `V` attached to
/// the link nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySpec {
    pub num_target: usize,
    pub num_classes: usize,
    pub homophily: f64,
    /// 2 or 3.
    pub node_types: usize,
    /// Link nodes; 0 means one per target node.
    pub num_links: usize,
    /// Target nodes joined by each link node.
    pub link_size: usize,
    pub feature_dim: usize,
    /// Scale of the class centroid in the target features.
    pub signal: f64,
    /// Standard deviation of the per-node feature noise.
    pub noise: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            num_target: 60,
            num_classes: 3,
            homophily: 0.7,
            node_types: 2,
            num_links: 0,
            link_size: 3,
            feature_dim: 16,
            signal: 1.0,
            noise: 1.0,
            train_fraction: 0.6,
            val_fraction: 0.2,
            seed: 0,
            tolerance: 0.03,
            max_iterations: 50_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedToy {
    pub graph: HeteroGraph,
    pub homophily: f64,
    /// The homophily landed within tolerance of the request.
    pub converged: bool,
}

impl ToySpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.num_target < 2 {
            return bad(format!(
                "need at least 2 target nodes, got {}",
                self.num_target
            ));
        }
        if self.num_classes == 0 || self.num_classes > self.num_target {
            return bad(format!(
                "{} classes cannot be planted on {} target nodes",
                self.num_classes, self.num_target
            ));
        }
        if !(2..=3).contains(&self.node_types) {
            return bad(format!(
                "node_types must be 2 or 3, got {}",
                self.node_types
            ));
        }
        if self.link_size == 0 {
            return Err(SynthError::NoTargetEdges);
        }
        if self.link_size > self.num_target {
            return bad(format!(
                "link_size {} exceeds {} target nodes",
                self.link_size, self.num_target
            ));
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(SynthError::TargetOutOfRange(self.homophily));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        let fractions = [self.train_fraction, self.val_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || fractions.iter().sum::<f64>() > 1.0
        {
            return bad("split fractions must lie in [0, 1] and sum to at most 1".into());
        }
        if !(self.signal.is_finite() && self.noise.is_finite() && self.noise >= 0.0) {
            return bad("signal and noise must be finite, noise non-negative".into());
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Draws a member of `class` with probability `h`, otherwise any target.
fn draw(rng: &mut ChaCha8Rng, members: &[Vec<usize>], class: usize, h: f64, n: usize) -> usize {
    if rng.random_bool(h) {
        let m = &members[class];
        m[rng.random_range(0..m.len())]
    } else {
        rng.random_range(0..n)
    }
}

/// Builds the planted graph, then rewires it onto the requested homophily.
pub fn generate_toy(spec: &ToySpec) -> Result<GeneratedToy, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_target;
    let c = spec.num_classes;

    let mut labels: Vec<i64> = (0..n).map(|i| (i % c) as i64).collect();
    labels.shuffle(&mut rng);
    let mut members = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        members[l as usize].push(i);
    }

    let links = if spec.num_links == 0 {
        n
    } else {
        spec.num_links
    };
    let affinity: Vec<usize> = (0..links).map(|p| p % c).collect();
    let mut joined: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); links];
    // Every target joins at least one link node, preferring its own class.
    for (i, &l) in labels.iter().enumerate() {
        let p = if rng.random_bool(spec.homophily) {
            let own: Vec<usize> = (0..links).filter(|&p| affinity[p] == l as usize).collect();
            if own.is_empty() {
                rng.random_range(0..links)
            } else {
                own[rng.random_range(0..own.len())]
            }
        } else {
            rng.random_range(0..links)
        };
        joined[p].insert(i);
    }
    for (p, set) in joined.iter_mut().enumerate() {
        while set.len() < spec.link_size {
            set.insert(draw(&mut rng, &members, affinity[p], spec.homophily, n));
        }
    }
    let link_edges: Vec<(usize, usize, f64)> = joined
        .iter()
        .enumerate()
        .flat_map(|(p, set)| set.iter().map(move |&a| (a, p, 1.0)))
        .collect();

    let mut node_types = vec![TARGET_TYPE.to_string(), LINK_TYPE.to_string()];
    let mut counts = BTreeMap::from([(TARGET_TYPE.to_string(), n), (LINK_TYPE.to_string(), links)]);
    let mut relations = vec![(
        TARGET_TYPE.to_string(),
        LINK_TYPE.to_string(),
        SparseMatrix::from_triplets(n, links, &link_edges)?,
    )];

    let centroids = gaussian(&mut rng, c, spec.feature_dim, spec.signal);
    let mut target_features = gaussian(&mut rng, n, spec.feature_dim, spec.noise);
    for (i, &l) in labels.iter().enumerate() {
        for (x, m) in target_features
            .row_mut(i)
            .iter_mut()
            .zip(centroids.row(l as usize))
        {
            *x += m;
        }
    }
    let mut features = BTreeMap::from([
        (TARGET_TYPE.to_string(), target_features),
        (
            LINK_TYPE.to_string(),
            gaussian(&mut rng, links, spec.feature_dim, 1.0),
        ),
    ]);

    if spec.node_types == 3 {
        let venues = c.max(2);
        let venue_edges: Vec<(usize, usize, f64)> = (0..links)
            .map(|p| {
                let v = if rng.random_bool(spec.homophily) {
                    affinity[p] % venues
                } else {
                    rng.random_range(0..venues)
                };
                (p, v, 1.0)
            })
            .collect();
        node_types.push(THIRD_TYPE.to_string());
        counts.insert(THIRD_TYPE.to_string(), venues);
        features.insert(
            THIRD_TYPE.to_string(),
            gaussian(&mut rng, venues, spec.feature_dim, 1.0),
        );
        relations.push((
            LINK_TYPE.to_string(),
            THIRD_TYPE.to_string(),
            SparseMatrix::from_triplets(links, venues, &venue_edges)?,
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    let n_val = ((spec.val_fraction * n as f64).round() as usize).min(n - n_train);
    let mut splits = vec![Split::Test; n];
    for (k, &i) in order.iter().enumerate() {
        if k < n_train {
            splits[i] = Split::Train;
        } else if k < n_train + n_val {
            splits[i] = Split::Val;
        }
    }

    let planted = HeteroGraph::new(GraphParts {
        node_types,
        counts,
        features,
        relations,
        target_type: TARGET_TYPE.to_string(),
        labels,
        num_classes: c,
        splits,
        origin: Some(format!(
            "toy n={} classes={} h={} types={} seed={}",
            n, c, spec.homophily, spec.node_types, spec.seed
        )),
    })?;
    if c == 1 {
        let homophily = graph_homophily(&planted, HOMOPHILY_LEN)?;
        return Ok(GeneratedToy {
            graph: planted,
            homophily,
            converged: (homophily - spec.homophily).abs() <= spec.tolerance,
        });
    }
    let out = rewire_to_homophily(
        &planted,
        &RewireSpec {
            target_h: spec.homophily,
            seed: spec.seed,
            max_iterations: spec.max_iterations,
            tolerance: spec.tolerance,
        },
    )?;
    Ok(GeneratedToy {
        graph: out.graph,
        homophily: out.achieved_h,
        converged: out.converged,
    })
}
