//! The instantaneous state of a network.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Full instantaneous state: time, flat node coordinates, clock values, the
/// latched-coordinate set, and any sticky guard atoms that have fired.
///
/// *Latched* coordinates were pinned to an exact value by event
/// localization (e.g. `x = 0` while a train is stopped at the platform);
/// they are held exactly — no drift — until the active field moves them
/// again. *Sticky atoms* are guard atoms declared one-shot (e.g. a tripped
/// power line): once true at an event they are treated as true forever.
/// Both are genuine state: restarting a trajectory from a snapshot must
/// reproduce it, so they live here and not inside the integrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub t: f64,
    /// Flat state vector (all node coordinates, in declaration order).
    pub x: Vec<f64>,
    /// Clock values, in declaration order. Nonnegative.
    pub tau: Vec<f64>,
    /// Coordinates currently pinned to an exact value.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub latched: BTreeMap<usize, f64>,
    /// Indices (into the event map's atom table) of fired sticky atoms.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub sticky_fired: BTreeSet<usize>,
}

impl NetworkState {
    pub fn new(t: f64, x: Vec<f64>, tau: Vec<f64>) -> NetworkState {
        NetworkState {
            t,
            x,
            tau,
            latched: BTreeMap::new(),
            sticky_fired: BTreeSet::new(),
        }
    }

    /// Pin a coordinate to an exact value.
    pub fn latch(&mut self, coord: usize, value: f64) {
        self.x[coord] = value;
        self.latched.insert(coord, value);
    }

    /// Release a latched coordinate.
    pub fn unlatch(&mut self, coord: usize) {
        self.latched.remove(&coord);
    }

    pub fn is_latched(&self, coord: usize) -> bool {
        self.latched.contains_key(&coord)
    }

    /// Re-assert all latch values onto the state vector (after an
    /// integration step computed fresh coordinates).
    pub fn apply_latches(&mut self) {
        for (&c, &v) in &self.latched {
            self.x[c] = v;
        }
    }
}
