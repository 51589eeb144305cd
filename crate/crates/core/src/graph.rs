//! Directed interaction graph, incidence matrices and the edge-Laplacian
//! stability certificate.
//!
//! Edge `(i, j)` means robot `i` keeps robot `j` inside its field of view;
//! only the tail robot acts on an edge. Edges are stored sorted by tail and
//! then by head, which fixes the bijection between edges and the gain/edge
//! index used everywhere else in the crate.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;

use crate::error::{EdgeRef, Error, Result};

/// Default tolerance on the smallest eigenvalue of the symmetric part of `L̄`.
pub const DEFAULT_EIG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: Vec<EdgeRef>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl Topology {
    /// Build a topology from 0-based `(tail, head)` pairs in any order.
    pub fn new(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = Vec::new();
        let mut seen = BTreeSet::new();
        for (tail, head) in pairs {
            for index in [tail, head] {
                if index >= n {
                    return Err(Error::RobotOutOfRange { index, n });
                }
            }
            if tail == head {
                return Err(Error::SelfLoop { robot: tail });
            }
            let e = EdgeRef { tail, head };
            if !seen.insert(e) {
                return Err(Error::DuplicateEdge { edge: e });
            }
            edges.push(e);
        }
        // all edges of robot 1 first, then robot 2, ...; ascending head within a robot
        edges.sort();

        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for (idx, e) in edges.iter().enumerate() {
            out_edges[e.tail].push(idx);
            in_edges[e.head].push(idx);
        }
        Ok(Self {
            n,
            edges,
            out_edges,
            in_edges,
        })
    }

    /// Build from 1-based pairs as written in scenario files.
    pub fn from_one_based(n: usize, pairs: &[[usize; 2]]) -> Result<Self> {
        let mut zero_based = Vec::with_capacity(pairs.len());
        for &[i, j] in pairs {
            if i == 0 || j == 0 {
                return Err(Error::invalid(
                    "topology.edges",
                    format!("robot indices are 1-based, got [{i}, {j}]"),
                ));
            }
            zero_based.push((i - 1, j - 1));
        }
        Self::new(n, zero_based)
    }

    pub fn to_one_based(&self) -> Vec<[usize; 2]> {
        self.edges
            .iter()
            .map(|e| [e.tail + 1, e.head + 1])
            .collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[EdgeRef] {
        &self.edges
    }

    pub fn edge(&self, index: usize) -> EdgeRef {
        self.edges[index]
    }

    /// The edge index `g(i, j)`, if the edge exists.
    pub fn edge_index(&self, tail: usize, head: usize) -> Option<usize> {
        self.edges.binary_search(&EdgeRef { tail, head }).ok()
    }

    /// Indices of edges leaving robot `i`, ascending.
    pub fn out_edges(&self, i: usize) -> &[usize] {
        &self.out_edges[i]
    }

    /// Indices of edges entering robot `i`, ascending.
    pub fn in_edges(&self, i: usize) -> &[usize] {
        &self.in_edges[i]
    }

    /// `|N_i^+| + |N_i^-|`.
    pub fn degree(&self, i: usize) -> usize {
        self.out_edges[i].len() + self.in_edges[i].len()
    }

    /// Out- and in-neighbour sets of robot `i`.
    pub fn neighbor_sets(&self, i: usize) -> Result<NeighborSets> {
        if i >= self.n {
            return Err(Error::RobotOutOfRange {
                index: i,
                n: self.n,
            });
        }
        Ok(NeighborSets {
            out: self.out_edges[i]
                .iter()
                .map(|&e| self.edges[e].head)
                .collect(),
            inn: self.in_edges[i]
                .iter()
                .map(|&e| self.edges[e].tail)
                .collect(),
        })
    }

    /// True iff every robot is reachable from `root` along directed edges.
    pub fn has_rooted_spanning_tree(&self, root: usize) -> bool {
        if root >= self.n {
            return false;
        }
        let mut visited = vec![false; self.n];
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            for &e in &self.out_edges[i] {
                let j = self.edges[e].head;
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        visited.into_iter().all(|v| v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSets {
    pub out: BTreeSet<usize>,
    pub inn: BTreeSet<usize>,
}

/// Incidence matrices and the block matrix `L̄` of a topology.
#[derive(Debug, Clone)]
pub struct IncidencePack {
    /// Signed incidence, `n x |E|`: +1 at the tail, -1 at the head.
    pub b: DMatrix<i64>,
    /// Outgoing incidence: `b` with the head entries zeroed.
    pub b_plus: DMatrix<i64>,
    /// `diag((BᵀB₊) ⊗ I₂, B₊ᵀB₊)`, size `3|E| x 3|E|`.
    pub lbar: DMatrix<f64>,
    /// `(L̄ + L̄ᵀ) / 2`.
    pub lbar_sym: DMatrix<f64>,
}

pub fn build_incidence(topology: &Topology) -> IncidencePack {
    let n = topology.n();
    let m = topology.edge_count();
    let mut b = DMatrix::<i64>::zeros(n, m);
    let mut b_plus = DMatrix::<i64>::zeros(n, m);
    for (idx, e) in topology.edges().iter().enumerate() {
        b[(e.tail, idx)] = 1;
        b[(e.head, idx)] = -1;
        b_plus[(e.tail, idx)] = 1;
    }

    let edge_lap = b.transpose() * &b_plus;
    let out_gram = b_plus.transpose() * &b_plus;
    let mut lbar = DMatrix::<f64>::zeros(3 * m, 3 * m);
    for r in 0..m {
        for c in 0..m {
            let v = edge_lap[(r, c)] as f64;
            lbar[(2 * r, 2 * c)] = v;
            lbar[(2 * r + 1, 2 * c + 1)] = v;
            lbar[(2 * m + r, 2 * m + c)] = out_gram[(r, c)] as f64;
        }
    }
    let lbar_sym = (&lbar + lbar.transpose()) * 0.5;
    IncidencePack {
        b,
        b_plus,
        lbar,
        lbar_sym,
    }
}

/// The directed edge Laplacian `BᵀB₊`.
pub fn edge_laplacian(pack: &IncidencePack) -> DMatrix<i64> {
    pack.b.transpose() * &pack.b_plus
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Theorem1Certificate {
    pub psd: bool,
    /// Smallest eigenvalue of `L̄⁺`; `+inf` for an edgeless graph.
    pub min_eig: f64,
}

/// Positive semi-definiteness of the symmetric part of `L̄`.
pub fn theorem1_certificate(pack: &IncidencePack, tol: f64) -> Result<Theorem1Certificate> {
    let dim = pack.lbar_sym.nrows();
    if dim == 0 {
        return Ok(Theorem1Certificate {
            psd: true,
            min_eig: f64::INFINITY,
        });
    }
    let min_eig = min_symmetric_eigenvalue(&pack.lbar_sym)?;
    Ok(Theorem1Certificate {
        psd: min_eig >= -tol,
        min_eig,
    })
}

pub(crate) fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let dim = m.nrows();
    let eig = m
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(Error::EigenSolver { dim })?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

pub(crate) fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_eigenvalues(m)?
        .first()
        .copied()
        .unwrap_or(f64::INFINITY))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle3() -> Topology {
        Topology::new(3, [(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn single_edge_incidence() {
        let t = Topology::new(2, [(0, 1)]).unwrap();
        let p = build_incidence(&t);
        assert_eq!(p.b, DMatrix::from_row_slice(2, 1, &[1, -1]));
        assert_eq!(p.b_plus, DMatrix::from_row_slice(2, 1, &[1, 0]));
        assert_eq!(edge_laplacian(&p), DMatrix::from_element(1, 1, 1));
    }

    #[test]
    fn cycle_edge_laplacian_matches_loops() {
        let p = build_incidence(&cycle3());
        let lap = edge_laplacian(&p);
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0;
                for k in 0..3 {
                    s += p.b[(k, a)] * p.b_plus[(k, b)];
                }
                assert_eq!(lap[(a, b)], s);
            }
        }
    }

    #[test]
    fn empty_edge_set() {
        let t = Topology::new(3, []).unwrap();
        let p = build_incidence(&t);
        assert_eq!(edge_laplacian(&p).shape(), (0, 0));
        let cert = theorem1_certificate(&p, DEFAULT_EIG_TOL).unwrap();
        assert!(cert.psd);
        assert!(!t.has_rooted_spanning_tree(0));
    }

    #[test]
    fn single_edge_is_psd() {
        let t = Topology::new(2, [(0, 1)]).unwrap();
        let cert = theorem1_certificate(&build_incidence(&t), DEFAULT_EIG_TOL).unwrap();
        // L̄⁺ = I₃ for one edge
        assert!(cert.psd);
        assert!((cert.min_eig - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edges_sorted_by_tail_then_head() {
        let t = Topology::new(4, [(2, 0), (0, 3), (1, 2), (0, 1)]).unwrap();
        let pairs: Vec<_> = t.edges().iter().map(|e| (e.tail, e.head)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 3), (1, 2), (2, 0)]);
        for (idx, e) in t.edges().iter().enumerate() {
            assert_eq!(t.edge_index(e.tail, e.head), Some(idx));
        }
        assert_eq!(t.edge_index(3, 0), None);
    }

    #[test]
    fn malformed_topologies_rejected() {
        match Topology::new(3, [(0, 1), (0, 1)]) {
            Err(Error::DuplicateEdge { edge }) => assert_eq!(edge.to_string(), "(1, 2)"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Topology::new(3, [(2, 2)]),
            Err(Error::SelfLoop { robot: 2 })
        ));
        assert!(matches!(
            Topology::new(2, [(0, 5)]),
            Err(Error::RobotOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn neighbor_sets_examples() {
        let t = Topology::new(2, [(0, 1)]).unwrap();
        let s = t.neighbor_sets(0).unwrap();
        assert_eq!(s.out, BTreeSet::from([1]));
        assert!(s.inn.is_empty());
        let s = t.neighbor_sets(1).unwrap();
        assert!(s.out.is_empty());
        assert_eq!(s.inn, BTreeSet::from([0]));

        let s = cycle3().neighbor_sets(1).unwrap();
        assert_eq!(s.out, BTreeSet::from([2]));
        assert_eq!(s.inn, BTreeSet::from([0]));
        assert!(t.neighbor_sets(2).is_err());
    }

    #[test]
    fn spanning_tree_checks() {
        // 4 -> 1 -> 2 -> 3 (1-based)
        let chain = Topology::new(4, [(3, 0), (0, 1), (1, 2)]).unwrap();
        assert!(chain.has_rooted_spanning_tree(3));
        assert!(!chain.has_rooted_spanning_tree(0));
        let split = Topology::new(4, [(0, 1), (2, 3)]).unwrap();
        assert!((0..4).all(|r| !split.has_rooted_spanning_tree(r)));
    }
}
