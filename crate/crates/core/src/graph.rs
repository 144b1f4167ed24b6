//! Communication graph algebra: weighted incidence matrix, Laplacian,
//! Kronecker lifts and the orthogonal projector onto Null(S').
//!
//! Agents are indexed from 0 internally; config files use 1-based indices.
//! Incidence rows are ordered pairs `(i, j)` sorted lexicographically.
//!
//! Matrix-vector products that feed the solvers accumulate their terms in a
//! fixed order (incidence-row order for `S'λ`, column order for `Sx` and `Lx`,
//! zero entries skipped, accumulator starting at `0.0`). The per-agent update
//! in [`crate::network`] reproduces the same order from local data only, which
//! is what makes the two execution modes agree bit for bit.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_REL_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectedWeight {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Communication topology as an explicit list of directed weights `s_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    num_agents: usize,
    weights: Vec<DirectedWeight>,
}

impl GraphSpec {
    /// Graph from directed entries `(i, j, s_ij)`; validated by [`build_incidence`].
    pub fn new(num_agents: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut weights: Vec<DirectedWeight> = entries
            .into_iter()
            .map(|(from, to, weight)| DirectedWeight { from, to, weight })
            .collect();
        weights.sort_by_key(|w| (w.from, w.to));
        GraphSpec { num_agents, weights }
    }

    /// Each undirected edge `(i, j, s)` becomes `s_ij = s_ji = s`.
    pub fn undirected(num_agents: usize, edges: &[(usize, usize, f64)]) -> Self {
        Self::new(
            num_agents,
            edges.iter().flat_map(|&(i, j, w)| [(i, j, w), (j, i, w)]),
        )
    }

    pub fn path(num_agents: usize) -> Self {
        let edges: Vec<_> = (1..num_agents).map(|i| (i - 1, i, 1.0)).collect();
        Self::undirected(num_agents, &edges)
    }

    pub fn ring(num_agents: usize) -> Self {
        let mut edges: Vec<_> = (1..num_agents).map(|i| (i - 1, i, 1.0)).collect();
        if num_agents > 2 {
            edges.push((num_agents - 1, 0, 1.0));
        }
        Self::undirected(num_agents, &edges)
    }

    pub fn complete(num_agents: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..num_agents {
            for j in i + 1..num_agents {
                edges.push((i, j, 1.0));
            }
        }
        Self::undirected(num_agents, &edges)
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    /// Directed entries in lexicographic `(from, to)` order.
    pub fn weights(&self) -> &[DirectedWeight] {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.weights
            .binary_search_by(|w| (w.from, w.to).cmp(&(i, j)))
            .ok()
            .map(|k| self.weights[k].weight)
    }

    /// Sorted neighbor list of agent `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.weights
            .iter()
            .filter(|w| w.from == i)
            .map(|w| w.to)
            .collect()
    }

    /// Checks index range, self loops, duplicates, symmetric presence and positivity.
    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 {
            return Err(Error::Topology("graph has no agents".into()));
        }
        for pair in self.weights.windows(2) {
            if (pair[0].from, pair[0].to) == (pair[1].from, pair[1].to) {
                return Err(Error::Topology(format!(
                    "duplicate entry ({}, {})",
                    pair[0].from, pair[0].to
                )));
            }
        }
        for w in &self.weights {
            if w.from >= self.num_agents || w.to >= self.num_agents {
                return Err(Error::Topology(format!(
                    "entry ({}, {}) references an agent outside 0..{}",
                    w.from, w.to, self.num_agents
                )));
            }
            if w.from == w.to {
                return Err(Error::Topology(format!("self loop at agent {}", w.from)));
            }
            if !(w.weight > 0.0) || !w.weight.is_finite() {
                return Err(Error::Weight {
                    i: w.from,
                    j: w.to,
                    weight: w.weight,
                });
            }
            if self.weight(w.to, w.from).is_none() {
                return Err(Error::Topology(format!(
                    "edge ({}, {}) present without its reverse ({}, {})",
                    w.from, w.to, w.to, w.from
                )));
            }
        }
        Ok(())
    }
}

/// Weighted edge-node incidence matrix `S` (one row per ordered neighbor pair).
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    matrix: DMatrix<f64>,
    rows: Vec<(usize, usize)>,
}

impl IncidenceMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> &[(usize, usize)] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_agents(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row_of(&self, i: usize, j: usize) -> Option<usize> {
        self.rows.binary_search(&(i, j)).ok()
    }

    /// `s_ij` for row `r = (i, j)`.
    pub fn row_weight(&self, r: usize) -> f64 {
        self.matrix[(r, self.rows[r].0)]
    }

    /// Lifted product `(S ⊗ I_n) x`.
    pub fn apply(&self, x: &[f64], n: usize) -> Vec<f64> {
        let cols = self.matrix.ncols();
        let mut out = vec![0.0; self.rows.len() * n];
        for r in 0..self.rows.len() {
            for k in 0..n {
                let mut acc = 0.0;
                for c in 0..cols {
                    let s = self.matrix[(r, c)];
                    if s != 0.0 {
                        acc += s * x[c * n + k];
                    }
                }
                out[r * n + k] = acc;
            }
        }
        out
    }

    /// Lifted product `(S' ⊗ I_n) λ`, accumulated in row order.
    pub fn apply_transpose(&self, lambda: &[f64], n: usize) -> Vec<f64> {
        let cols = self.matrix.ncols();
        let mut out = vec![0.0; cols * n];
        for r in 0..self.rows.len() {
            for c in 0..cols {
                let s = self.matrix[(r, c)];
                if s != 0.0 {
                    for k in 0..n {
                        out[c * n + k] += s * lambda[r * n + k];
                    }
                }
            }
        }
        out
    }
}

/// Builds `S`: row `(i, j)` holds `+s_ij` at column `i` and `-s_ij` at column `j`.
pub fn build_incidence(spec: &GraphSpec) -> Result<IncidenceMatrix> {
    spec.validate()?;
    let rows: Vec<(usize, usize)> = spec.weights().iter().map(|w| (w.from, w.to)).collect();
    let mut matrix = DMatrix::zeros(rows.len(), spec.num_agents());
    for (r, w) in spec.weights().iter().enumerate() {
        matrix[(r, w.from)] = w.weight;
        matrix[(r, w.to)] = -w.weight;
    }
    Ok(IncidenceMatrix { matrix, rows })
}

/// `L = S'S`, each entry accumulated over incidence rows in order.
pub fn laplacian(s: &IncidenceMatrix) -> DMatrix<f64> {
    let m = s.matrix();
    let n = m.ncols();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for r in 0..m.nrows() {
                let (a, b) = (m[(r, i)], m[(r, j)]);
                if a != 0.0 && b != 0.0 {
                    acc += a * b;
                }
            }
            l[(i, j)] = acc;
        }
    }
    l
}

/// Lifted product `(L ⊗ I_n) x`, accumulated in column order.
pub fn apply_laplacian(l: &DMatrix<f64>, x: &[f64], n: usize) -> Vec<f64> {
    let agents = l.nrows();
    let mut out = vec![0.0; agents * n];
    for i in 0..agents {
        for k in 0..n {
            let mut acc = 0.0;
            for j in 0..agents {
                let lij = l[(i, j)];
                if lij != 0.0 {
                    acc += lij * x[j * n + k];
                }
            }
            out[i * n + k] = acc;
        }
    }
    out
}

/// `A ⊗ I_n`.
pub fn kron_lift(a: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "lift dimension must be at least 1".into(),
        });
    }
    Ok(linalg::kron_identity(a, n))
}

/// Orthogonal projector `J` onto Null(S') with an orthonormal basis `U` (`J = UU'`).
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    j: DMatrix<f64>,
    basis: DMatrix<f64>,
}

impl Projector {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.j
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// `J ⊗ I_n`.
    pub fn lifted(&self, n: usize) -> DMatrix<f64> {
        linalg::kron_identity(&self.j, n)
    }
}

pub fn nullspace_projector(s: &IncidenceMatrix) -> Result<Projector> {
    let agents = s.num_agents();
    let rank = linalg::rank(s.matrix(), RANK_REL_TOL);
    let null_dim = agents - rank;
    if null_dim != 1 {
        return Err(Error::Disconnected { null_dim });
    }
    let range = linalg::range_basis(s.matrix(), RANK_REL_TOL);
    let rows = s.num_rows();
    let j = DMatrix::identity(rows, rows) - &range * range.transpose();
    let basis = linalg::orthonormal_range_of_projector(&j);
    Ok(Projector { j, basis })
}

/// Breadth-first reachability from agent 0 over the undirected support.
pub fn check_connected(spec: &GraphSpec) -> bool {
    let n = spec.num_agents();
    if n == 0 {
        return false;
    }
    let mut adjacency = vec![Vec::new(); n];
    for w in spec.weights() {
        if w.from < n && w.to < n {
            adjacency[w.from].push(w.to);
            adjacency[w.to].push(w.from);
        }
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for &j in &adjacency[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Everything the solvers need about the graph, for a fixed agent dimension `n`.
#[derive(Debug, Clone)]
pub struct Topology {
    spec: GraphSpec,
    incidence: IncidenceMatrix,
    laplacian: DMatrix<f64>,
    projector: Projector,
    dim: usize,
    lifted_s: DMatrix<f64>,
    lifted_l: DMatrix<f64>,
    lifted_j: DMatrix<f64>,
}

impl Topology {
    pub fn new(spec: GraphSpec, dim: usize) -> Result<Self> {
        let incidence = build_incidence(&spec)?;
        if !check_connected(&spec) {
            let l = laplacian(&incidence);
            let null_dim = l.nrows() - linalg::rank(&l, RANK_REL_TOL);
            return Err(Error::Disconnected { null_dim });
        }
        let laplacian = laplacian(&incidence);
        let projector = nullspace_projector(&incidence)?;
        let lifted_s = kron_lift(incidence.matrix(), dim)?;
        let lifted_l = kron_lift(&laplacian, dim)?;
        let lifted_j = projector.lifted(dim);
        Ok(Topology {
            spec,
            incidence,
            laplacian,
            projector,
            dim,
            lifted_s,
            lifted_l,
            lifted_j,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }
    pub fn incidence(&self) -> &IncidenceMatrix {
        &self.incidence
    }
    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }
    pub fn projector(&self) -> &Projector {
        &self.projector
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn num_agents(&self) -> usize {
        self.spec.num_agents()
    }
    /// N̄, the number of ordered neighbor pairs.
    pub fn num_pairs(&self) -> usize {
        self.incidence.num_rows()
    }
    pub fn lifted_s(&self) -> &DMatrix<f64> {
        &self.lifted_s
    }
    pub fn lifted_l(&self) -> &DMatrix<f64> {
        &self.lifted_l
    }
    pub fn lifted_j(&self) -> &DMatrix<f64> {
        &self.lifted_j
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn assert_matrix(actual: &DMatrix<f64>, rows: usize, expected: &[f64]) {
        let e = DMatrix::from_row_slice(rows, expected.len() / rows, expected);
        assert_eq!(actual.shape(), e.shape());
        assert_abs_diff_eq!((actual - e).amax(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn incidence_two_agents_unit() {
        let s = build_incidence(&GraphSpec::path(2)).unwrap();
        assert_matrix(s.matrix(), 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(s.rows(), &[(0, 1), (1, 0)]);
    }

    #[test]
    fn incidence_asymmetric_weights() {
        let s = build_incidence(&GraphSpec::new(2, [(0, 1, 2.0), (1, 0, 3.0)])).unwrap();
        assert_matrix(s.matrix(), 2, &[2.0, -2.0, -3.0, 3.0]);
    }

    #[test]
    fn incidence_three_path() {
        let s = build_incidence(&GraphSpec::path(3)).unwrap();
        assert_matrix(
            s.matrix(),
            4,
            &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.0, -1.0, 1.0],
        );
    }

    #[test]
    fn incidence_errors() {
        let one_way = GraphSpec::new(2, [(0, 1, 1.0)]);
        assert!(matches!(build_incidence(&one_way), Err(Error::Topology(_))));
        let negative = GraphSpec::new(2, [(0, 1, 1.0), (1, 0, -1.0)]);
        assert!(matches!(build_incidence(&negative), Err(Error::Weight { .. })));
        let zero = GraphSpec::new(2, [(0, 1, 0.0), (1, 0, 1.0)]);
        assert!(matches!(build_incidence(&zero), Err(Error::Weight { .. })));
        let self_loop = GraphSpec::new(2, [(0, 0, 1.0)]);
        assert!(build_incidence(&self_loop).is_err());
    }

    #[test]
    fn laplacian_examples() {
        let s = build_incidence(&GraphSpec::path(2)).unwrap();
        assert_matrix(&laplacian(&s), 2, &[2.0, -2.0, -2.0, 2.0]);
        let s = build_incidence(&GraphSpec::new(2, [(0, 1, 2.0), (1, 0, 3.0)])).unwrap();
        assert_matrix(&laplacian(&s), 2, &[13.0, -13.0, -13.0, 13.0]);
    }

    #[test]
    fn laplacian_kernel_is_ones() {
        let s = build_incidence(&GraphSpec::ring(5)).unwrap();
        let l = laplacian(&s);
        let ev = linalg::sym_eigenvalues(&l);
        assert_abs_diff_eq!(ev[0], 0.0, epsilon = 1e-12);
        assert!(ev[1] > 1e-6);
        let ones = nalgebra::DVector::from_element(5, 1.0);
        assert_abs_diff_eq!((&l * ones).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn kron_lift_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(kron_lift(&a, 1).unwrap(), a);
        let two = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(kron_lift(&two, 3).unwrap(), DMatrix::identity(3, 3) * 2.0);
        assert!(kron_lift(&a, 0).is_err());

        let s = build_incidence(&GraphSpec::path(2)).unwrap();
        let lifted = kron_lift(s.matrix(), 2).unwrap();
        let consensus = nalgebra::DVector::from_vec(vec![0.3, -0.7, 0.3, -0.7]);
        assert_abs_diff_eq!((lifted * consensus).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn projector_two_agents() {
        let s = build_incidence(&GraphSpec::path(2)).unwrap();
        let p = nullspace_projector(&s).unwrap();
        assert_matrix(p.matrix(), 2, &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(p.rank(), 1);
    }

    #[test]
    fn projector_rank_on_three_path() {
        let s = build_incidence(&GraphSpec::path(3)).unwrap();
        let p = nullspace_projector(&s).unwrap();
        assert_eq!(p.rank(), 4 - 3 + 1);
    }

    #[test]
    fn projector_rejects_disconnected() {
        let spec = GraphSpec::undirected(4, &[(0, 1, 1.0), (2, 3, 1.0)]);
        let s = build_incidence(&spec).unwrap();
        assert!(matches!(
            nullspace_projector(&s),
            Err(Error::Disconnected { null_dim: 2 })
        ));
        assert!(matches!(Topology::new(spec, 1), Err(Error::Disconnected { .. })));
    }

    #[test]
    fn connectivity_examples() {
        assert!(check_connected(&GraphSpec::path(2)));
        assert!(!check_connected(&GraphSpec::undirected(
            4,
            &[(0, 1, 1.0), (2, 3, 1.0)]
        )));
        assert!(check_connected(&GraphSpec::path(3)));
    }

    #[test]
    fn folded_products_match_dense_products() {
        let spec = GraphSpec::new(
            3,
            [
                (0, 1, 1.5),
                (1, 0, 0.5),
                (1, 2, 2.0),
                (2, 1, 1.0),
                (0, 2, 0.7),
                (2, 0, 1.1),
            ],
        );
        let s = build_incidence(&spec).unwrap();
        let n = 2;
        let x: Vec<f64> = (0..6).map(|k| (k as f64 * 0.37).sin()).collect();
        let lam: Vec<f64> = (0..12).map(|k| (k as f64 * 0.91).cos()).collect();
        let sl = kron_lift(s.matrix(), n).unwrap();
        let dense_sx = &sl * nalgebra::DVector::from_column_slice(&x);
        let dense_stl = sl.transpose() * nalgebra::DVector::from_column_slice(&lam);
        for (a, b) in s.apply(&x, n).iter().zip(dense_sx.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        for (a, b) in s.apply_transpose(&lam, n).iter().zip(dense_stl.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        let l = laplacian(&s);
        let dense_lx = kron_lift(&l, n).unwrap() * nalgebra::DVector::from_column_slice(&x);
        for (a, b) in apply_laplacian(&l, &x, n).iter().zip(dense_lx.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }
}
