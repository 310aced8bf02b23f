//! Communication graphs and mixing matrices.
//!
//! An [`Adjacency`] is an undirected simple graph on agents `0..n`. The
//! Metropolis rule turns it into a symmetric doubly stochastic [`Network`],
//! which carries the two spectral quantities the theory needs: the spectral
//! gap `rho_w = ||W - 11^T/n||_2` and the deviation norm `||W - I||`.

use std::collections::{BTreeSet, VecDeque};

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::linalg;

/// Maximum number of Erdos-Renyi draws before giving up on connectivity.
pub const ER_RETRY_CAP: usize = 1000;

/// Tolerance on row and column sums for double stochasticity.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Input tolerance for [`spectral_gap`]; looser than [`STOCHASTIC_TOL`] so
/// that user supplied matrices with slight rounding can still be analysed
/// and then flagged by [`validate_network`].
const SPECTRAL_INPUT_TOL: f64 = 1e-9;

/// Above this size the spectral gap is computed by power iteration.
const DENSE_EIGEN_LIMIT: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("agent count must be positive")]
    EmptyGraph,
    #[error("link probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("no connected graph after {attempts} draws (n = {n}, q = {q}); q is too small for n")]
    RetryCapExceeded { n: usize, q: f64, attempts: usize },
    #[error("edge ({0}, {1}) is invalid: self-loop or out of range")]
    InvalidEdge(usize, usize),
    #[error("mixing matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("mixing matrix contains a non-finite entry")]
    NonFinite,
    #[error("mixing matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("mixing matrix is not doubly stochastic (max row/column sum error {0:e})")]
    NotStochastic(f64),
}

/// Undirected simple graph on `n` agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<BTreeSet<usize>>,
}

impl Adjacency {
    /// Graph with `n` isolated nodes.
    pub fn empty(n: usize) -> Self {
        Self {
            neighbors: vec![BTreeSet::new(); n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::EmptyGraph);
        }
        let mut adj = Self::empty(n);
        for &(i, j) in edges {
            adj.add_edge(i, j)?;
        }
        Ok(adj)
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        let mut adj = Self::empty(n);
        for i in 1..n {
            adj.insert(i - 1, i);
        }
        adj
    }

    /// Star with node 0 as the center.
    pub fn star(n: usize) -> Self {
        let mut adj = Self::empty(n);
        for i in 1..n {
            adj.insert(0, i);
        }
        adj
    }

    pub fn complete(n: usize) -> Self {
        let mut adj = Self::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                adj.insert(i, j);
            }
        }
        adj
    }

    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<(), TopologyError> {
        let n = self.len();
        if i == j || i >= n || j >= n {
            return Err(TopologyError::InvalidEdge(i, j));
        }
        self.insert(i, j);
        Ok(())
    }

    fn insert(&mut self, i: usize, j: usize) {
        self.neighbors[i].insert(j);
        self.neighbors[j].insert(i);
    }

    /// Number of agents.
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[i].iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors.get(i).is_some_and(|s| s.contains(&j))
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Breadth-first connectivity check. The one-node graph is connected.
    pub fn is_connected(&self) -> bool {
        bfs_connected(self.len(), |i| self.neighbors[i].iter().copied().collect())
    }
}

fn bfs_connected(n: usize, neighbors: impl Fn(usize) -> Vec<usize>) -> bool {
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for j in neighbors(i) {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == n
}

/// Draws G(n, q) graphs until one is connected.
pub fn generate_connected_er(n: usize, q: f64, seed: u64) -> Result<Adjacency, TopologyError> {
    if n == 0 {
        return Err(TopologyError::EmptyGraph);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(TopologyError::InvalidProbability(q));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ER_RETRY_CAP {
        let mut adj = Adjacency::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(q) {
                    adj.insert(i, j);
                }
            }
        }
        if adj.is_connected() {
            return Ok(adj);
        }
    }
    Err(TopologyError::RetryCapExceeded {
        n,
        q,
        attempts: ER_RETRY_CAP,
    })
}

/// Which matrix norm to use for `||W - I||`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviationNorm {
    #[default]
    Frobenius,
    /// Operator 2-norm; tighter than Frobenius.
    Spectral,
}

/// A mixing matrix together with its spectral summary.
#[derive(Debug, Clone)]
pub struct Network {
    weights: Array2<f64>,
    rho_w: f64,
    dev_norm: f64,
}

impl Network {
    /// Wraps a user-supplied mixing matrix. The matrix must be square,
    /// finite, symmetric and (approximately) doubly stochastic; finer
    /// conditions are left to [`validate_network`].
    pub fn from_weights(weights: Array2<f64>) -> Result<Self, TopologyError> {
        let rho_w = spectral_gap(weights.view())?;
        let dev_norm = deviation_norm(weights.view());
        Ok(Self {
            weights,
            rho_w,
            dev_norm,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Number of agents.
    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    /// Spectral gap `||W - 11^T/n||_2`.
    pub fn rho_w(&self) -> f64 {
        self.rho_w
    }

    /// Frobenius norm of `W - I`.
    pub fn dev_norm(&self) -> f64 {
        self.dev_norm
    }

    pub fn dev_norm_with(&self, kind: DeviationNorm) -> f64 {
        match kind {
            DeviationNorm::Frobenius => self.dev_norm,
            DeviationNorm::Spectral => deviation_norm_spectral(self.weights.view()),
        }
    }
}

/// Metropolis weights: `w_ij = 1/max(d_i, d_j)` on edges, the diagonal
/// absorbs the remainder of each row.
pub fn metropolis_weights(adj: &Adjacency) -> Network {
    let n = adj.len();
    let mut w = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut off = 0.0;
        for j in adj.neighbors(i) {
            let wij = 1.0 / adj.degree(i).max(adj.degree(j)) as f64;
            w[[i, j]] = wij;
            off += wij;
        }
        // The exact remainder is nonnegative; rounding can leave -1e-17.
        w[[i, i]] = (1.0 - off).max(0.0);
    }
    if n > 0 && (0..n).all(|i| w[[i, i]] <= 0.0) {
        log::warn!(
            "Metropolis weights on this {n}-node graph have no positive diagonal entry; \
             the network will fail validation"
        );
    }
    let rho_w = spectral_gap_unchecked(w.view());
    let dev_norm = deviation_norm(w.view());
    Network {
        weights: w,
        rho_w,
        dev_norm,
    }
}

fn max_asymmetry(w: ArrayView2<f64>) -> f64 {
    let n = w.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((w[[i, j]] - w[[j, i]]).abs());
        }
    }
    worst
}

fn max_stochastic_error(w: ArrayView2<f64>) -> f64 {
    let rows = w.rows().into_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = w.columns().into_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Spectral norm of `W - 11^T/n` for a symmetric doubly stochastic `W`.
pub fn spectral_gap(w: ArrayView2<f64>) -> Result<f64, TopologyError> {
    let (rows, cols) = w.dim();
    if rows != cols {
        return Err(TopologyError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(TopologyError::EmptyGraph);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(TopologyError::NonFinite);
    }
    let asym = max_asymmetry(w);
    if asym > SPECTRAL_INPUT_TOL {
        return Err(TopologyError::NotSymmetric(asym));
    }
    let err = max_stochastic_error(w);
    if err > SPECTRAL_INPUT_TOL {
        return Err(TopologyError::NotStochastic(err));
    }
    Ok(spectral_gap_unchecked(w))
}

fn spectral_gap_unchecked(w: ArrayView2<f64>) -> f64 {
    let n = w.nrows();
    let avg = 1.0 / n as f64;
    let deviation = Array2::from_shape_fn((n, n), |(i, j)| w[[i, j]] - avg);
    let rho = if n <= DENSE_EIGEN_LIMIT {
        linalg::symmetric_eigenvalues(deviation.view())
            .into_iter()
            .map(f64::abs)
            .fold(0.0, f64::max)
    } else {
        let ones = Array1::ones(n);
        linalg::symmetric_spectral_norm_power(deviation.view(), Some(&ones), 100_000, 1e-13)
    };
    // Rounding can push a value of exactly 1 (disconnected W) a hair above.
    rho.min(1.0)
}

/// Frobenius norm of `W - I`.
pub fn deviation_norm(w: ArrayView2<f64>) -> f64 {
    linalg::frobenius((&w - &Array2::<f64>::eye(w.nrows())).view())
}

/// Operator 2-norm of `W - I` for symmetric `W`.
pub fn deviation_norm_spectral(w: ArrayView2<f64>) -> f64 {
    let d = &w - &Array2::<f64>::eye(w.nrows());
    linalg::symmetric_eigenvalues(d.view())
        .into_iter()
        .map(f64::abs)
        .fold(0.0, f64::max)
}

/// Pass/fail per network hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub symmetric: bool,
    pub doubly_stochastic: bool,
    pub nonnegative: bool,
    /// The graph of positive off-diagonal weights is connected.
    pub connected: bool,
    /// Some `w_ii > 0`.
    pub positive_diagonal: bool,
    /// `rho_w < 1`, with a margin of the stochasticity tolerance.
    pub contracting: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.symmetric
            && self.doubly_stochastic
            && self.nonnegative
            && self.connected
            && self.positive_diagonal
            && self.contracting
    }

    /// Names of failed checks, for error messages.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            (self.symmetric, "symmetric"),
            (self.doubly_stochastic, "doubly_stochastic"),
            (self.nonnegative, "nonnegative"),
            (self.connected, "connected"),
            (self.positive_diagonal, "positive_diagonal"),
            (self.contracting, "contracting"),
        ]
        .into_iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, name)| name)
        .collect()
    }
}

pub fn validate_network(net: &Network) -> ValidationReport {
    let w = net.weights.view();
    let n = net.n();
    ValidationReport {
        symmetric: max_asymmetry(w) <= STOCHASTIC_TOL,
        doubly_stochastic: max_stochastic_error(w) <= STOCHASTIC_TOL,
        nonnegative: w.iter().all(|&v| v >= 0.0),
        connected: bfs_connected(n, |i| {
            (0..n).filter(|&j| j != i && w[[i, j]] > 0.0).collect()
        }),
        positive_diagonal: (0..n).any(|i| w[[i, i]] > 0.0),
        contracting: net.rho_w < 1.0 - STOCHASTIC_TOL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn er_with_certain_links_is_complete() {
        let adj = generate_connected_er(2, 1.0, 99).unwrap();
        assert_eq!(adj, Adjacency::complete(2));
        assert_eq!(adj.edge_count(), 1);
    }

    #[test]
    fn er_single_node() {
        let adj = generate_connected_er(1, 0.5, 3).unwrap();
        assert_eq!(adj.len(), 1);
        assert!(adj.is_connected());
    }

    #[test]
    fn er_reference_family_is_connected() {
        for seed in 0..20 {
            let adj = generate_connected_er(10, 0.4, seed).unwrap();
            assert_eq!(adj.len(), 10);
            assert!(adj.is_connected());
        }
    }

    #[test]
    fn er_errors() {
        assert_eq!(
            generate_connected_er(3, 1.5, 0),
            Err(TopologyError::InvalidProbability(1.5))
        );
        assert_eq!(generate_connected_er(0, 0.5, 0), Err(TopologyError::EmptyGraph));
        assert!(matches!(
            generate_connected_er(5, 0.0, 0),
            Err(TopologyError::RetryCapExceeded { attempts: ER_RETRY_CAP, .. })
        ));
    }

    #[test]
    fn adjacency_rejects_self_loops() {
        assert_eq!(
            Adjacency::from_edges(3, &[(1, 1)]),
            Err(TopologyError::InvalidEdge(1, 1))
        );
        assert_eq!(
            Adjacency::from_edges(3, &[(0, 3)]),
            Err(TopologyError::InvalidEdge(0, 3))
        );
    }

    #[test]
    fn metropolis_path3() {
        let net = metropolis_weights(&Adjacency::path(3));
        let expected = array![[0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]];
        assert_eq!(net.weights(), &expected);
        assert_abs_diff_eq!(net.rho_w(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(net.dev_norm(), 2.5f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn metropolis_single_node() {
        let net = metropolis_weights(&Adjacency::empty(1));
        assert_eq!(net.weights(), &array![[1.0]]);
        assert_eq!(net.rho_w(), 0.0);
    }

    #[test]
    fn metropolis_star3_center_first() {
        let net = metropolis_weights(&Adjacency::star(3));
        let expected = array![[0.0, 0.5, 0.5], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5]];
        assert_eq!(net.weights(), &expected);
    }

    #[test]
    fn spectral_gap_trivial_cases() {
        assert_eq!(spectral_gap(array![[1.0]].view()).unwrap(), 0.0);
        let eye = Array2::<f64>::eye(3);
        assert_abs_diff_eq!(spectral_gap(eye.view()).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn spectral_gap_rejects_bad_input() {
        let asym = array![[0.5, 0.5], [0.4, 0.6]];
        assert!(matches!(
            spectral_gap(asym.view()),
            Err(TopologyError::NotSymmetric(_))
        ));
        let sub = array![[0.5, 0.4], [0.4, 0.5]];
        assert!(matches!(
            spectral_gap(sub.view()),
            Err(TopologyError::NotStochastic(_))
        ));
        let rect = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            spectral_gap(rect.view()),
            Err(TopologyError::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn deviation_norm_examples() {
        assert_eq!(deviation_norm(Array2::<f64>::eye(4).view()), 0.0);
        assert_eq!(deviation_norm(array![[0.0, 1.0], [1.0, 0.0]].view()), 2.0);
        let path = metropolis_weights(&Adjacency::path(3));
        // Spectral norm of W - I is max |lambda - 1| = 1.5 for eigenvalues {1, 1/2, -1/2}.
        assert_abs_diff_eq!(
            path.dev_norm_with(DeviationNorm::Spectral),
            1.5,
            epsilon = 1e-14
        );
    }

    #[test]
    fn validation_examples() {
        let path = validate_network(&metropolis_weights(&Adjacency::path(3)));
        assert!(path.passed(), "{path:?}");

        let eye = Network::from_weights(Array2::eye(3)).unwrap();
        let report = validate_network(&eye);
        assert!(!report.connected);
        assert!(!report.contracting);
        assert_eq!(eye.rho_w(), 1.0);

        let swap = metropolis_weights(&Adjacency::path(2));
        assert_eq!(swap.weights(), &array![[0.0, 1.0], [1.0, 0.0]]);
        let report = validate_network(&swap);
        assert!(report.connected);
        assert!(!report.positive_diagonal);
        assert!(!report.contracting);
        assert_eq!(report.failures(), vec!["positive_diagonal", "contracting"]);
        assert_abs_diff_eq!(swap.rho_w(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn complete_graph_has_zero_diagonal() {
        let net = metropolis_weights(&Adjacency::complete(4));
        assert!((0..4).all(|i| net.weights()[[i, i]] == 0.0));
        assert!(!validate_network(&net).positive_diagonal);
    }

    #[test]
    fn power_iteration_path_matches_jacobi() {
        let adj = generate_connected_er(30, 0.3, 5).unwrap();
        let net = metropolis_weights(&adj);
        let n = net.n();
        let dev = Array2::from_shape_fn((n, n), |(i, j)| net.weights()[[i, j]] - 1.0 / n as f64);
        let ones = Array1::ones(n);
        let power = linalg::symmetric_spectral_norm_power(dev.view(), Some(&ones), 100_000, 1e-15);
        assert_abs_diff_eq!(power, net.rho_w(), epsilon = 1e-9);
    }
}
