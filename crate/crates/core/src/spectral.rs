//! Eigenvalues of degree-normalized adjacency matrices and the frequency
//! response of the polynomial hop filter `sum_l gamma_l * lambda^l`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dense::DenseMatrix;
use crate::graph::{GraphError, HeteroGraph};
use crate::metapath::{induced_adjacency, MetaPath, MetaPathError};
use crate::model::{init_gamma, ModelError};
use crate::sparse::{normalize_relation, SparseMatrix};

/// Largest matrix the dense solver accepts.
pub const MAX_NODES: usize = 500;
/// How close the top eigenvalue must be to one.
pub const EIGEN_TOL: f64 = 1e-8;
/// Required gap between `|beta(lambda_i)|` and one for `i >= 1`.
pub const RESPONSE_MARGIN: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("matrix must be square, got {0:?}")]
    NotSquare((usize, usize)),
    #[error("matrix is not symmetric")]
    Asymmetric,
    #[error("{0} nodes exceeds the dense solver limit of {MAX_NODES}")]
    TooLarge(usize),
    #[error("Jacobi iteration did not converge in {MAX_SWEEPS} sweeps")]
    NoConvergence,
    #[error("meta-path {0} must start and end at the same type")]
    OpenPath(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    MetaPath(#[from] MetaPathError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending. Column `i` of
/// `vectors` belongs to `values[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl Eigen {
    /// Largest `||A v - lambda v||` over all pairs.
    pub fn max_residual(&self, a: &DenseMatrix) -> f64 {
        let n = self.values.len();
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|i| {
                        let av: f64 = (0..n).map(|j| a.get(i, j) * self.vectors.get(j, k)).sum();
                        (av - self.values[k] * self.vectors.get(i, k)).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Cyclic Jacobi rotations on a dense symmetric matrix.
pub fn symmetric_eigen(a: &DenseMatrix) -> Result<Eigen, SpectralError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(SpectralError::NotSquare(a.shape()));
    }
    if n > MAX_NODES {
        return Err(SpectralError::TooLarge(n));
    }
    for i in 0..n {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > SYMMETRY_TOL {
                return Err(SpectralError::Asymmetric);
            }
        }
    }
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    let scale: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = (t * t + 1.0).sqrt().recip();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        return Err(SpectralError::NoConvergence);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, k, v.get(r, i));
        }
    }
    Ok(Eigen { values, vectors })
}

/// Dense `D^{-1/2} A D^{-1/2}` of a symmetric adjacency.
pub fn normalized_dense(adj: &SparseMatrix) -> Result<DenseMatrix, SpectralError> {
    if !adj.is_square() {
        return Err(SpectralError::NotSquare(adj.shape()));
    }
    if adj.rows() > MAX_NODES {
        return Err(SpectralError::TooLarge(adj.rows()));
    }
    if !adj.is_symmetric(SYMMETRY_TOL) {
        return Err(SpectralError::Asymmetric);
    }
    Ok(normalize_relation(adj)?.to_dense())
}

/// Eigenpairs of the normalized adjacency.
pub fn eigen_normalized_adjacency(adj: &SparseMatrix) -> Result<Eigen, SpectralError> {
    symmetric_eigen(&normalized_dense(adj)?)
}

/// Eigenvalues of the normalized adjacency, descending.
pub fn eig_normalized_adjacency(adj: &SparseMatrix) -> Result<Vec<f64>, SpectralError> {
    Ok(eigen_normalized_adjacency(adj)?.values)
}

/// Induced adjacency of a closed meta-path, symmetrized when the path is not
/// its own reverse.
pub fn metapath_adjacency(
    graph: &HeteroGraph,
    path: &MetaPath,
) -> Result<SparseMatrix, SpectralError> {
    if path.first() != path.last() {
        return Err(SpectralError::OpenPath(path.key()));
    }
    let m = induced_adjacency(graph, path, false)?;
    let reversed: Vec<&String> = path.types().iter().rev().collect();
    if path.types().iter().eq(reversed.iter().copied()) {
        return Ok(m);
    }
    let t = m.transpose();
    let half: Vec<(usize, usize, f64)> = m
        .iter()
        .chain(t.iter())
        .map(|(r, c, v)| (r, c, 0.5 * v))
        .collect();
    Ok(SparseMatrix::from_triplets(m.rows(), m.cols(), &half)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterResponse {
    pub eigenvalues: Vec<f64>,
    /// `beta(lambda_i) = sum_l gamma_l lambda_i^l`.
    pub response: Vec<f64>,
}

/// Horner evaluation of the hop polynomial at `x`.
pub fn polynomial(gamma: &[f64], x: f64) -> f64 {
    gamma.iter().rev().fold(0.0, |acc, &g| acc * x + g)
}

pub fn filter_response(gamma: &[f64], eigenvalues: &[f64]) -> FilterResponse {
    FilterResponse {
        eigenvalues: eigenvalues.to_vec(),
        response: eigenvalues.iter().map(|&l| polynomial(gamma, l)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Verdict {
    Pass,
    /// The filter is not low-pass on a graph meeting the preconditions.
    Fail(String),
    /// The graph or the weights are outside the verified setting.
    Precondition(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowpassReport {
    pub verdict: Verdict,
    pub lambda0: f64,
    /// Second-largest eigenvalue, if any.
    pub lambda1: Option<f64>,
    /// `1 - max_{i >= 1} |beta(lambda_i)|`; 1 for a single node.
    pub worst_margin: f64,
    /// Eigenvalue attaining the worst margin.
    pub worst_lambda: Option<f64>,
}

impl LowpassReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Checks that `lambda_0 = 1` and `|beta(lambda_i)| < 1` for every other
/// eigenvalue. `eigenvalues` must be sorted descending.
pub fn verify_lowpass(gamma: &[f64], eigenvalues: &[f64]) -> LowpassReport {
    let resp = filter_response(gamma, eigenvalues);
    let (worst_margin, worst_lambda) = resp
        .response
        .iter()
        .zip(eigenvalues)
        .skip(1)
        .map(|(b, &l)| (1.0 - b.abs(), l))
        .fold(
            (1.0, None),
            |(m, l), (mi, li)| if mi < m { (mi, Some(li)) } else { (m, l) },
        );
    let lambda0 = eigenvalues.first().copied().unwrap_or(f64::NAN);
    let verdict = if gamma.is_empty() || gamma.iter().any(|&g| !(g > 0.0)) {
        Verdict::Precondition("hop weights must all be positive".into())
    } else if (gamma.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        Verdict::Precondition("hop weights must sum to one".into())
    } else if eigenvalues
        .iter()
        .filter(|&&l| (l - 1.0).abs() <= EIGEN_TOL)
        .count()
        > 1
    {
        Verdict::Precondition("eigenvalue 1 is repeated, so the graph is disconnected".into())
    } else if !((lambda0 - 1.0).abs() <= EIGEN_TOL) {
        Verdict::Fail(format!("largest eigenvalue is {lambda0}, expected 1"))
    } else if eigenvalues.iter().any(|l| l.abs() > 1.0 + EIGEN_TOL) {
        Verdict::Fail("an eigenvalue lies outside [-1, 1]".into())
    } else if worst_margin <= RESPONSE_MARGIN {
        Verdict::Fail(format!(
            "|beta| = {} at lambda = {}",
            1.0 - worst_margin,
            worst_lambda.unwrap_or(f64::NAN)
        ))
    } else {
        Verdict::Pass
    };
    LowpassReport {
        verdict,
        lambda0,
        lambda1: eigenvalues.get(1).copied(),
        worst_margin,
        worst_lambda,
    }
}

/// Erdős–Rényi `G(n, p)` made connected by linking each further component to
/// a random earlier node. Symmetric, unit weights, no self loops.
pub fn random_connected_graph(n: usize, p: f64, rng: &mut impl Rng) -> SparseMatrix {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p.clamp(0.0, 1.0)) {
                edges.push((i, j));
            }
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in &edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    for i in 1..n {
        let (ri, r0) = (find(&mut parent, i), find(&mut parent, 0));
        if ri != r0 {
            let comp: Vec<usize> = (0..n).filter(|&k| find(&mut parent, k) == r0).collect();
            let j = comp[rng.random_range(0..comp.len())];
            edges.push((j.min(i), j.max(i)));
            parent[ri.max(r0)] = ri.min(r0);
        }
    }
    let triplets: Vec<(usize, usize, f64)> = edges
        .iter()
        .flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)])
        .collect();
    SparseMatrix::from_triplets(n, n, &triplets).expect("indices in range")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteSpec {
    pub max_nodes: usize,
    pub trials: usize,
    pub alpha: f64,
    pub hops: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trial {
    pub nodes: usize,
    pub edges: usize,
    pub max_residual: f64,
    pub report: LowpassReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub gamma: Vec<f64>,
    pub trials: Vec<Trial>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.trials
            .iter()
            .all(|t| t.report.passed() && t.max_residual <= EIGEN_TOL)
    }

    pub fn worst_margin(&self) -> f64 {
        self.trials
            .iter()
            .map(|t| t.report.worst_margin)
            .fold(1.0, f64::min)
    }

    /// Largest second eigenvalue seen.
    pub fn worst_lambda1(&self) -> f64 {
        self.trials
            .iter()
            .filter_map(|t| t.report.lambda1)
            .fold(f64::MIN, f64::max)
    }
}

/// Runs the low-pass check on seeded random connected graphs with 2 to
/// `max_nodes` nodes. The first trial is always the single-edge bipartite
/// graph.
pub fn verify_random_graphs(spec: &SuiteSpec) -> Result<SuiteReport, SpectralError> {
    let gamma = init_gamma(spec.alpha, spec.hops)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let max_nodes = spec.max_nodes.clamp(2, MAX_NODES);
    let mut trials = Vec::with_capacity(spec.trials);
    for t in 0..spec.trials {
        let adj = if t == 0 {
            random_connected_graph(2, 1.0, &mut rng)
        } else {
            let n = rng.random_range(2..=max_nodes);
            let p = rng.random_range(0.05..0.6);
            random_connected_graph(n, p, &mut rng)
        };
        let dense = normalized_dense(&adj)?;
        let eig = symmetric_eigen(&dense)?;
        trials.push(Trial {
            nodes: adj.rows(),
            edges: adj.nnz() / 2,
            max_residual: eig.max_residual(&dense),
            report: verify_lowpass(&gamma, &eig.values),
        });
    }
    Ok(SuiteReport { gamma, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(n: usize, edges: &[(usize, usize)]) -> SparseMatrix {
        let t: Vec<_> = edges
            .iter()
            .flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)])
            .collect();
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    const GAMMA: [f64; 4] = [0.25, 0.1875, 0.140625, 0.421875];

    #[test]
    fn closed_forms() {
        let k2 = eig_normalized_adjacency(&sym(2, &[(0, 1)])).unwrap();
        assert!(close(&k2, &[1.0, -1.0], 1e-12), "{k2:?}");
        let k3 = eig_normalized_adjacency(&sym(3, &[(0, 1), (1, 2), (0, 2)])).unwrap();
        assert!(close(&k3, &[1.0, -0.5, -0.5], 1e-12), "{k3:?}");
        let empty = eig_normalized_adjacency(&SparseMatrix::zeros(4, 4)).unwrap();
        assert_eq!(empty, vec![0.0; 4]);
    }

    #[test]
    fn asymmetric_is_rejected() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0)]).unwrap();
        assert!(matches!(
            eig_normalized_adjacency(&m),
            Err(SpectralError::Asymmetric)
        ));
        let d = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            symmetric_eigen(&d),
            Err(SpectralError::Asymmetric)
        ));
    }

    #[test]
    fn horner_examples() {
        assert_eq!(GAMMA.to_vec(), init_gamma(0.25, 3).unwrap());
        let r = filter_response(&GAMMA, &[1.0, 0.0, -1.0]);
        assert!((r.response[0] - 1.0).abs() < 1e-15);
        assert_eq!(r.response[1], 0.25);
        assert!((r.response[2] + 0.21875).abs() < 1e-15);
    }

    #[test]
    fn triangle_and_edge_pass() {
        let k3 = eig_normalized_adjacency(&sym(3, &[(0, 1), (1, 2), (0, 2)])).unwrap();
        let rep = verify_lowpass(&GAMMA, &k3);
        assert!(rep.passed());
        let beta: f64 = 0.25 - 0.1875 * 0.5 + 0.140625 * 0.25 - 0.421875 * 0.125;
        assert!(
            (1.0 - rep.worst_margin - beta.abs()).abs() < 1e-12,
            "{rep:?}"
        );
        let k2 = eig_normalized_adjacency(&sym(2, &[(0, 1)])).unwrap();
        let rep = verify_lowpass(&GAMMA, &k2);
        assert!(rep.passed());
        assert!((rep.worst_margin - (1.0 - 0.21875)).abs() < 1e-12);
    }

    #[test]
    fn disconnected_is_a_precondition_violation() {
        let two = sym(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]);
        let rep = verify_lowpass(&GAMMA, &eig_normalized_adjacency(&two).unwrap());
        assert!(matches!(rep.verdict, Verdict::Precondition(_)), "{rep:?}");
    }

    #[test]
    fn random_graphs_are_connected_and_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let g = random_connected_graph(12, 0.05, &mut a);
            assert_eq!(g, random_connected_graph(12, 0.05, &mut b));
            let eig = eig_normalized_adjacency(&g).unwrap();
            assert!((eig[0] - 1.0).abs() < 1e-10);
            assert!(eig[1] < 1.0 - 1e-10, "{eig:?}");
        }
    }

    #[test]
    fn suite_passes() {
        let rep = verify_random_graphs(&SuiteSpec {
            max_nodes: 20,
            trials: 30,
            alpha: 0.25,
            hops: 3,
            seed: 1,
        })
        .unwrap();
        assert!(rep.passed());
        assert_eq!(rep.trials[0].nodes, 2);
    }
}
