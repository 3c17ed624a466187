//! Connection structures: who currently listens to whom, and which declared
//! constraint each node currently runs under.
//!
//! A structure over `k` nodes is a `k × (k+1)` 0/1-and-index matrix. Column
//! 0 holds each node's active constraint index (`0` = unconstrained, `ℓ ≥ 1`
//! selects the node's ℓ-th declared constraint); columns `1..=k` form the
//! dependency matrix, where entry `(i, j) = 1` means node `i`'s field may
//! depend on node `j`'s state. Self-dependence is implicit and the diagonal
//! must be zero — that is enforced at construction.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of a connection structure within a network's structure set.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct AlphaId(pub usize);

impl fmt::Display for AlphaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Errors constructing or combining connection structures.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConnectionError {
    #[error("connection structure needs at least one node")]
    Empty,
    #[error("self-dependence is implicit: diagonal entry ({node},{node}) must be 0")]
    SelfLoop { node: usize },
    #[error("structures have different node counts ({a} vs {b})")]
    SizeMismatch { a: usize, b: usize },
    #[error(
        "join conflict at node {node}: constraint indices {a} and {b} are both nonzero"
    )]
    ConstraintConflict { node: usize, a: u32, b: u32 },
    #[error("embedding maps {given} nodes into {target}, which does not fit")]
    BadEmbedding { given: usize, target: usize },
    #[error("embedding positions must be strictly increasing and within range")]
    BadPositions,
}

/// A single connection structure.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConnectionStructure {
    k: usize,
    /// Column 0: per-node constraint index.
    constraints: Vec<u32>,
    /// Columns 1..=k, row-major: `adjacency[i*k + j] = α_{ij}`.
    adjacency: Vec<u8>,
}

impl ConnectionStructure {
    /// The unconstrained, fully decoupled structure (the identity for joins).
    pub fn empty(k: usize) -> ConnectionStructure {
        ConnectionStructure {
            k,
            constraints: vec![0; k],
            adjacency: vec![0; k * k],
        }
    }

    /// Build from explicit column-0 indices and dependency entries.
    /// `edges` lists `(source, target)` pairs, 0-based: "target listens to
    /// source", i.e. entry `(target, source) = 1`.
    pub fn new(
        k: usize,
        constraints: Vec<u32>,
        edges: &[(usize, usize)],
    ) -> Result<ConnectionStructure, ConnectionError> {
        if k == 0 {
            return Err(ConnectionError::Empty);
        }
        assert_eq!(constraints.len(), k, "constraint column length");
        let mut s = ConnectionStructure {
            k,
            constraints,
            adjacency: vec![0; k * k],
        };
        for &(src, dst) in edges {
            assert!(src < k && dst < k, "edge endpoint out of range");
            if src == dst {
                return Err(ConnectionError::SelfLoop { node: src + 1 });
            }
            s.adjacency[dst * k + src] = 1;
        }
        Ok(s)
    }

    pub fn node_count(&self) -> usize {
        self.k
    }

    /// Constraint index of node `i` (column 0).
    pub fn constraint_index(&self, i: usize) -> u32 {
        self.constraints[i]
    }

    pub fn set_constraint_index(&mut self, i: usize, idx: u32) {
        self.constraints[i] = idx;
    }

    /// Whether node `i`'s field may depend on node `j` (`i ≠ j`).
    pub fn depends(&self, i: usize, j: usize) -> bool {
        i != j && self.adjacency[i * self.k + j] == 1
    }

    pub fn set_depends(&mut self, i: usize, j: usize, on: bool) {
        assert_ne!(i, j, "diagonal is fixed at zero");
        self.adjacency[i * self.k + j] = on as u8;
    }

    /// Nodes that node `i` listens to.
    pub fn inputs(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let k = self.k;
        (0..k).filter(move |&j| self.adjacency[i * k + j] == 1)
    }

    /// `(constraint index, input set)` of node `i` — everything that decides
    /// which field component the node is allowed to run.
    pub fn input_signature(&self, i: usize) -> (u32, Vec<usize>) {
        (self.constraints[i], self.inputs(i).collect())
    }

    /// True when no node is constrained and no node listens to another.
    pub fn is_empty(&self) -> bool {
        self.constraints.iter().all(|&c| c == 0) && self.adjacency.iter().all(|&a| a == 0)
    }

    /// Entrywise max with `other` ("tropical" join). Dependency entries
    /// combine as OR; constraint indices must not conflict (both nonzero and
    /// different), and a nonzero index wins over zero.
    pub fn join(&self, other: &ConnectionStructure) -> Result<ConnectionStructure, ConnectionError> {
        if self.k != other.k {
            return Err(ConnectionError::SizeMismatch {
                a: self.k,
                b: other.k,
            });
        }
        let mut out = self.clone();
        for i in 0..self.k {
            let (a, b) = (self.constraints[i], other.constraints[i]);
            out.constraints[i] = match (a, b) {
                (0, b) => b,
                (a, 0) => a,
                (a, b) if a == b => a,
                (a, b) => return Err(ConnectionError::ConstraintConflict { node: i + 1, a, b }),
            };
        }
        for (o, &b) in out.adjacency.iter_mut().zip(&other.adjacency) {
            *o = (*o).max(b);
        }
        Ok(out)
    }

    /// Embed into a structure over `k` nodes, placing this structure's nodes
    /// at the strictly increasing `positions` and leaving all other entries
    /// zero.
    pub fn embed(&self, k: usize, positions: &[usize]) -> Result<ConnectionStructure, ConnectionError> {
        if positions.len() != self.k || k < self.k {
            return Err(ConnectionError::BadEmbedding {
                given: self.k,
                target: k,
            });
        }
        if positions.windows(2).any(|w| w[0] >= w[1])
            || positions.iter().any(|&p| p >= k)
        {
            return Err(ConnectionError::BadPositions);
        }
        let mut out = ConnectionStructure::empty(k);
        for i in 0..self.k {
            out.constraints[positions[i]] = self.constraints[i];
            for j in 0..self.k {
                out.adjacency[positions[i] * k + positions[j]] = self.adjacency[i * self.k + j];
            }
        }
        Ok(out)
    }

    /// Restrict to the sub-structure on `positions` (inverse of
    /// [`ConnectionStructure::embed`] on its image).
    pub fn project(&self, positions: &[usize]) -> ConnectionStructure {
        let k = positions.len();
        let mut out = ConnectionStructure::empty(k);
        for (i, &pi) in positions.iter().enumerate() {
            out.constraints[i] = self.constraints[pi];
            for (j, &pj) in positions.iter().enumerate() {
                out.adjacency[i * k + j] = self.adjacency[pi * self.k + pj];
            }
        }
        out
    }

    /// The undirected dependency graph of this structure alone, as an
    /// adjacency matrix (`true` where `i` listens to `j` or vice versa).
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.k;
        (0..k).flat_map(move |i| {
            (i + 1..k).filter_map(move |j| {
                (self.adjacency[i * k + j] == 1 || self.adjacency[j * k + i] == 1)
                    .then_some((i, j))
            })
        })
    }
}

impl fmt::Display for ConnectionStructure {
    /// Rows as `i: [ℓ | a_{i1} … a_{ik}]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.k {
            write!(f, "{}: [{} |", i + 1, self.constraints[i])?;
            for j in 0..self.k {
                write!(f, " {}", self.adjacency[i * self.k + j])?;
            }
            writeln!(f, "]")?;
        }
        Ok(())
    }
}

/// Union of the dependency graphs of a family of structures — the
/// connection graph used to partition a network into components. Directed
/// edges are retained; components are taken on the underlying undirected
/// graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionGraph {
    k: usize,
    adj: Vec<bool>,
    directed: Vec<bool>,
    labels: Vec<String>,
}

impl ConnectionGraph {
    pub fn from_structures<'a>(
        k: usize,
        structures: impl IntoIterator<Item = &'a ConnectionStructure>,
    ) -> ConnectionGraph {
        let mut adj = vec![false; k * k];
        let mut directed = vec![false; k * k];
        for s in structures {
            assert_eq!(s.node_count(), k, "structure size mismatch");
            for i in 0..k {
                for j in s.inputs(i) {
                    directed[i * k + j] = true;
                    adj[i * k + j] = true;
                    adj[j * k + i] = true;
                }
            }
        }
        ConnectionGraph { k, adj, directed, labels: Vec::new() }
    }

    /// Attach node labels (for display; order matches node indices).
    pub fn with_labels(mut self, labels: Vec<String>) -> ConnectionGraph {
        assert_eq!(labels.len(), self.k);
        self.labels = labels;
        self
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn node_count(&self) -> usize {
        self.k
    }

    /// Whether node `i` listens to node `j` under some structure.
    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.directed[i * self.k + j]
    }

    pub fn connected(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.k + j]
    }

    /// Connected components, each sorted, in order of their smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.k];
        let mut comps = Vec::new();
        for start in 0..self.k {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut comp = Vec::new();
            seen[start] = true;
            while let Some(n) = stack.pop() {
                comp.push(n);
                for m in 0..self.k {
                    if !seen[m] && self.adj[n * self.k + m] {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }
}
