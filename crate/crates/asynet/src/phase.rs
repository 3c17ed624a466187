//! Node phase spaces.
//!
//! Each node's space is a product of one-dimensional factors; the network
//! state concatenates all node coordinates into one flat vector. Angular
//! factors are in radians. During evolution circle coordinates are left
//! unwrapped (so winding is continuous for the integrator); they are reduced
//! to `[0, 2π)` when states are emitted as output.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

/// A one-dimensional factor of a node's phase space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Factor {
    /// A compact interval `[lo, hi]`. Trajectories that reach an endpoint
    /// moving outward freeze there (the whole node's field is stopped).
    Interval { lo: f64, hi: f64 },
    /// The real line.
    RealLine,
    /// The circle, in radians.
    Circle,
}

impl Factor {
    /// Clamp a raw coordinate into the factor's domain; circle coordinates
    /// are reduced to `[0, 2π)`.
    pub fn normalize(self, v: f64) -> f64 {
        match self {
            Factor::Interval { lo, hi } => v.clamp(lo, hi),
            Factor::RealLine => v,
            Factor::Circle => v.rem_euclid(TAU),
        }
    }

    /// True if `v` lies in the factor's domain (always true for lines and
    /// circles, which have no boundary).
    pub fn contains(self, v: f64) -> bool {
        match self {
            Factor::Interval { lo, hi } => (lo..=hi).contains(&v),
            Factor::RealLine | Factor::Circle => true,
        }
    }
}

/// Errors in a phase-space declaration.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhaseSpaceError {
    #[error("a network needs at least one node")]
    NoNodes,
    #[error("node {node} has no coordinates")]
    EmptyNode { node: usize },
    #[error("node {node} coordinate {coord}: interval needs lo < hi, got [{lo}, {hi}]")]
    BadInterval {
        node: usize,
        coord: usize,
        lo: f64,
        hi: f64,
    },
}

/// The product phase space of all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpace {
    nodes: Vec<Vec<Factor>>,
    offsets: Vec<usize>,
}

impl PhaseSpace {
    /// Build from per-node factor lists, validating interval bounds.
    pub fn new(nodes: Vec<Vec<Factor>>) -> Result<PhaseSpace, PhaseSpaceError> {
        if nodes.is_empty() {
            return Err(PhaseSpaceError::NoNodes);
        }
        for (i, factors) in nodes.iter().enumerate() {
            if factors.is_empty() {
                return Err(PhaseSpaceError::EmptyNode { node: i + 1 });
            }
            for (c, f) in factors.iter().enumerate() {
                if let Factor::Interval { lo, hi } = f {
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(PhaseSpaceError::BadInterval {
                            node: i + 1,
                            coord: c + 1,
                            lo: *lo,
                            hi: *hi,
                        });
                    }
                }
            }
        }
        Ok(PhaseSpace::new_unchecked(nodes))
    }

    fn new_unchecked(nodes: Vec<Vec<Factor>>) -> PhaseSpace {
        let mut offsets = Vec::with_capacity(nodes.len());
        let mut acc = 0;
        for n in &nodes {
            offsets.push(acc);
            acc += n.len();
        }
        PhaseSpace { nodes, offsets }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_dim(&self, node: usize) -> usize {
        self.nodes[node].len()
    }

    pub fn node_dims(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().map(|n| n.len())
    }

    /// Total flat dimension.
    pub fn dim(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.nodes[self.nodes.len() - 1].len())
    }

    /// Flat offset of a node's first coordinate.
    pub fn node_offset(&self, node: usize) -> usize {
        self.offsets[node]
    }

    /// Flat index of `(node, coord)`, both 0-based.
    pub fn flat_index(&self, node: usize, coord: usize) -> usize {
        self.offsets[node] + coord
    }

    /// Inverse of [`PhaseSpace::flat_index`].
    pub fn node_of_flat(&self, flat: usize) -> (usize, usize) {
        let node = match self.offsets.binary_search(&flat) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (node, flat - self.offsets[node])
    }

    pub fn factor(&self, node: usize, coord: usize) -> Factor {
        self.nodes[node][coord]
    }

    pub fn factor_flat(&self, flat: usize) -> Factor {
        let (n, c) = self.node_of_flat(flat);
        self.nodes[n][c]
    }

    pub fn node_factors(&self, node: usize) -> &[Factor] {
        &self.nodes[node]
    }

    /// Iterate flat factors in coordinate order.
    pub fn factors_flat(&self) -> impl Iterator<Item = Factor> + '_ {
        self.nodes.iter().flatten().copied()
    }

    /// True if every coordinate lies in its factor's domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self.factors_flat().zip(x).all(|(f, &v)| f.contains(v))
    }

    /// Concatenate with another phase space (for product networks).
    pub fn product(&self, other: &PhaseSpace) -> PhaseSpace {
        let mut nodes = self.nodes.clone();
        nodes.extend(other.nodes.iter().cloned());
        PhaseSpace::new_unchecked(nodes)
    }

    /// Restrict to a subset of nodes, in the given order.
    pub fn restrict(&self, nodes: &[usize]) -> PhaseSpace {
        PhaseSpace::new_unchecked(nodes.iter().map(|&n| self.nodes[n].clone()).collect())
    }
}

/// Reduce circle coordinates of a flat state to `[0, 2π)` for output.
pub fn normalize_for_output(space: &PhaseSpace, x: &[f64]) -> Vec<f64> {
    space
        .factors_flat()
        .zip(x)
        .map(|(f, &v)| if matches!(f, Factor::Circle) { f.normalize(v) } else { v })
        .collect()
}
