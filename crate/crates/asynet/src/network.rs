//! The network type: phase space, connection structures, vector fields,
//! constraints, clocks, and the event map, assembled and cross-validated.
//!
//! A network couples `k` nodes. At any state exactly one *connection
//! structure* is active (chosen by the event map); the structure fixes which
//! nodes listen to which, and which nodes are held on a constraint. Each
//! structure has its own vector field over the full state, plus a 0/1 rate
//! for every clock. The structural consistency checks here are cheap and
//! run at build time; the sampled semantic checks (admissibility,
//! regularity) live in [`crate::checks`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::connection::{AlphaId, ConnectionStructure};
use crate::constraint::{ConstraintError, ConstraintSpec};
use crate::event_map::{EventMapError, EventMapSpec, EventRule, Selection};
use crate::expr::{
    BindError, BoundPred, Declarations, EvalCtx, EvalError, Expr, Pred,
};
use crate::field::{ClockRate, FieldError, VectorFieldSpec};
use crate::phase::{Factor, PhaseSpace, PhaseSpaceError};
use crate::state::NetworkState;

// Clocks are declared by name only. A clock advances piecewise linearly
// with rate 0 or 1 (set per structure by the vector fields) and never
// decreases; its "context" — the set of structures in which it runs — is
// derived from those rates, see [`Network::clock_contexts`].

/// Errors assembling or cross-validating a network.
#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error(transparent)]
    Phase(#[from] PhaseSpaceError),
    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("duplicate clock name `{0}`")]
    DuplicateClock(String),
    #[error("duplicate structure name `{0}`")]
    DuplicateStructure(String),
    #[error("structures `{0}` and `{1}` have identical matrices; the admissible set is a set")]
    DuplicateMatrix(String, String),
    #[error("structure `{name}` spans {got} nodes but the network has {want}")]
    StructureSize { name: String, got: usize, want: usize },
    #[error("structure `{name}` holds node {node} on constraint {index}, which is not declared")]
    UnknownConstraint { name: String, node: usize, index: u32 },
    #[error("node {node} declares constraint {index} twice")]
    DuplicateConstraint { node: usize, index: u32 },
    #[error("node {node} constraint indices must be 1..=p with no gaps; found {index}")]
    ConstraintGap { node: usize, index: u32 },
    #[error("no connection structures declared")]
    NoStructures,
    #[error("structure `{0}` has no vector field")]
    MissingField(String),
    #[error("field for structure `{name}`: {source}")]
    Field {
        name: String,
        #[source]
        source: FieldError,
    },
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    EventMap(#[from] EventMapError),
    #[error("termination predicate: {0}")]
    Termination(#[source] BindError),
    #[error("no event rules and no default structure declared")]
    NoEventMap,
    #[error("initial state has {got} coordinates, phase space has {want}")]
    InitialSize { got: usize, want: usize },
    #[error("initial coordinate {coord} = {value} lies outside its factor")]
    InitialOutside { coord: usize, value: f64 },
}

/// One node's declaration: a name and an ordered list of 1-d factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDecl {
    pub name: String,
    pub factors: Vec<Factor>,
    /// Per-coordinate names used in output headers; defaults to the node
    /// name for 1-d nodes and `name.j` (1-based) otherwise.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coord_names: Vec<String>,
}

/// A compiled, cross-validated network.
#[derive(Debug, Clone)]
pub struct Network {
    name: String,
    phase: PhaseSpace,
    node_names: Vec<String>,
    coord_names: Vec<String>,
    /// `p_i`: number of declared constraints per node.
    constraint_counts: Vec<u32>,
    constraints: Vec<ConstraintSpec>,
    structure_names: Vec<String>,
    structures: Vec<ConnectionStructure>,
    fields: Vec<VectorFieldSpec>,
    event_map: EventMapSpec,
    clock_names: Vec<String>,
    param_names: Vec<String>,
    param_values: Vec<f64>,
    decls: Declarations,
    termination: Option<(Pred, BoundPred)>,
}

impl Network {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn phase(&self) -> &PhaseSpace {
        &self.phase
    }

    pub fn decls(&self) -> &Declarations {
        &self.decls
    }

    pub fn node_count(&self) -> usize {
        self.phase.node_count()
    }

    pub fn dim(&self) -> usize {
        self.phase.dim()
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn coord_names(&self) -> &[String] {
        &self.coord_names
    }

    pub fn clock_count(&self) -> usize {
        self.clock_names.len()
    }

    pub fn clock_names(&self) -> &[String] {
        &self.clock_names
    }

    /// Structures in which clock `j` runs (rate 1).
    pub fn clock_contexts(&self, j: usize) -> BTreeSet<AlphaId> {
        self.fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.clock_rate(j) == ClockRate::Running)
            .map(|(i, _)| AlphaId(i))
            .collect()
    }

    pub fn structure_count(&self) -> usize {
        self.structures.len()
    }

    pub fn structures(&self) -> &[ConnectionStructure] {
        &self.structures
    }

    pub fn structure(&self, alpha: AlphaId) -> &ConnectionStructure {
        &self.structures[alpha.0]
    }

    pub fn structure_name(&self, alpha: AlphaId) -> &str {
        &self.structure_names[alpha.0]
    }

    pub fn structure_by_name(&self, name: &str) -> Option<AlphaId> {
        self.structure_names.iter().position(|n| n == name).map(AlphaId)
    }

    pub fn field(&self, alpha: AlphaId) -> &VectorFieldSpec {
        &self.fields[alpha.0]
    }

    pub fn event_map(&self) -> &EventMapSpec {
        &self.event_map
    }

    pub fn constraints(&self) -> &[ConstraintSpec] {
        &self.constraints
    }

    pub fn constraint_counts(&self) -> &[u32] {
        &self.constraint_counts
    }

    /// Constraint `(node, index)` (index is 1-based).
    pub fn constraint(&self, node: usize, index: u32) -> Option<&ConstraintSpec> {
        self.constraints
            .iter()
            .find(|c| c.node == node && c.index == index)
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn param_values(&self) -> &[f64] {
        &self.param_values
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.param_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.param_values[i])
    }

    /// Override a parameter value after building (scenario files do this).
    pub fn set_param(&mut self, name: &str, value: f64) -> bool {
        match self.param_names.iter().position(|n| n == name) {
            Some(i) => {
                self.param_values[i] = value;
                true
            }
            None => false,
        }
    }

    pub fn termination(&self) -> Option<&Pred> {
        self.termination.as_ref().map(|(p, _)| p)
    }

    pub(crate) fn termination_bound(&self) -> Option<&BoundPred> {
        self.termination.as_ref().map(|(_, b)| b)
    }

    /// Evaluation context for a state, borrowing this network's parameters.
    pub fn ctx<'a>(&'a self, state: &'a NetworkState) -> EvalCtx<'a> {
        EvalCtx { x: &state.x, tau: &state.tau, params: &self.param_values }
    }

    /// A state at time `t` with all clocks zero.
    pub fn initial_state(&self, t: f64, x: Vec<f64>) -> Result<NetworkState, NetworkError> {
        if x.len() != self.dim() {
            return Err(NetworkError::InitialSize { got: x.len(), want: self.dim() });
        }
        for (i, &v) in x.iter().enumerate() {
            if !self.phase.factor_flat(i).contains(v) {
                return Err(NetworkError::InitialOutside { coord: i, value: v });
            }
        }
        Ok(NetworkState::new(t, x, vec![0.0; self.clock_count()]))
    }

    /// Which structure the event map selects at `state`.
    pub fn eval_event_map(
        &self,
        state: &NetworkState,
        eps: f64,
    ) -> Result<Selection, EvalError> {
        self.event_map
            .eval(&self.ctx(state), eps, &state.sticky_fired)
    }

    /// Evaluate the vector field of `alpha` at `state` into `dx` (state
    /// derivatives) and `dtau` (clock rates).
    pub fn eval_field(
        &self,
        alpha: AlphaId,
        state: &NetworkState,
        dx: &mut [f64],
        dtau: &mut [f64],
    ) -> Result<(), EvalError> {
        let field = &self.fields[alpha.0];
        field.eval_into(&self.ctx(state), dx)?;
        for (slot, rate) in dtau.iter_mut().zip(field.clock_rates()) {
            *slot = rate.value();
        }
        Ok(())
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "network `{}`: {} nodes, {} structures", self.name, self.node_count(), self.structure_count())?;
        for (i, name) in self.node_names.iter().enumerate() {
            writeln!(f, "  node {i} `{name}`: {} coords, {} constraints", self.phase.node_dim(i), self.constraint_counts[i])?;
        }
        for (i, name) in self.structure_names.iter().enumerate() {
            writeln!(f, "  structure #{i} `{name}`:")?;
            for line in format!("{}", self.structures[i]).lines() {
                writeln!(f, "    {line}")?;
            }
        }
        Ok(())
    }
}

/// Incremental builder for [`Network`]. Declare nodes, params, and clocks
/// first; structures, fields, and rules may then reference them.
#[derive(Debug, Clone, Default)]
pub struct NetworkBuilder {
    name: String,
    nodes: Vec<NodeDecl>,
    params: Vec<(String, f64)>,
    clocks: Vec<String>,
    constraints: Vec<(usize, u32, Pred, Vec<usize>)>,
    structures: Vec<(String, ConnectionStructure)>,
    fields: Vec<Option<(Vec<Expr>, Vec<ClockRate>)>>,
    rules: Vec<EventRule>,
    default: Option<AlphaId>,
    termination: Option<Pred>,
}

impl NetworkBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        NetworkBuilder { name: name.into(), ..Default::default() }
    }

    /// Declare a node; returns its index.
    pub fn node(&mut self, name: impl Into<String>, factors: Vec<Factor>) -> usize {
        self.nodes.push(NodeDecl { name: name.into(), factors, coord_names: Vec::new() });
        self.nodes.len() - 1
    }

    /// Declare a node with explicit per-coordinate output names.
    pub fn node_named(
        &mut self,
        name: impl Into<String>,
        factors: Vec<Factor>,
        coord_names: Vec<&str>,
    ) -> usize {
        self.nodes.push(NodeDecl {
            name: name.into(),
            factors,
            coord_names: coord_names.into_iter().map(str::to_owned).collect(),
        });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.params.push((name.into(), value));
        self
    }

    /// Declare a clock; returns its index.
    pub fn clock(&mut self, name: impl Into<String>) -> usize {
        self.clocks.push(name.into());
        self.clocks.len() - 1
    }

    /// Declare constraint `index` (1-based) of `node`: on region `region`,
    /// the node-local coordinates `frozen` are held.
    pub fn constraint(
        &mut self,
        node: usize,
        index: u32,
        region: Pred,
        frozen: Vec<usize>,
    ) -> &mut Self {
        self.constraints.push((node, index, region, frozen));
        self
    }

    /// Declare a connection structure; returns its id.
    pub fn structure(&mut self, name: impl Into<String>, s: ConnectionStructure) -> AlphaId {
        self.structures.push((name.into(), s));
        self.fields.push(None);
        AlphaId(self.structures.len() - 1)
    }

    /// Attach the vector field of structure `alpha`: one expression per flat
    /// state coordinate, one rate per clock.
    pub fn field(
        &mut self,
        alpha: AlphaId,
        components: Vec<Expr>,
        clock_rates: Vec<ClockRate>,
    ) -> &mut Self {
        self.fields[alpha.0] = Some((components, clock_rates));
        self
    }

    pub fn rule(&mut self, when: Pred, target: AlphaId) -> &mut Self {
        self.rules.push(EventRule::new(when, target));
        self
    }

    /// A rule whose atoms latch true permanently once fired.
    pub fn rule_sticky(&mut self, when: Pred, target: AlphaId) -> &mut Self {
        self.rules.push(EventRule::sticky(when, target));
        self
    }

    pub fn push_rule(&mut self, rule: EventRule) -> &mut Self {
        self.rules.push(rule);
        self
    }

    pub fn default_structure(&mut self, alpha: AlphaId) -> &mut Self {
        self.default = Some(alpha);
        self
    }

    /// Integration stops (status "terminated") once this predicate holds.
    pub fn termination(&mut self, pred: Pred) -> &mut Self {
        self.termination = Some(pred);
        self
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Validate everything and produce the compiled network.
    pub fn build(self) -> Result<Network, NetworkError> {
        let k = self.nodes.len();
        let phase = PhaseSpace::new(self.nodes.iter().map(|n| n.factors.clone()).collect())?;

        let mut node_names = Vec::with_capacity(k);
        for n in &self.nodes {
            if node_names.contains(&n.name) {
                return Err(NetworkError::DuplicateNode(n.name.clone()));
            }
            node_names.push(n.name.clone());
        }

        let mut coord_names = Vec::with_capacity(phase.dim());
        for (i, n) in self.nodes.iter().enumerate() {
            let dim = phase.node_dim(i);
            if n.coord_names.len() == dim {
                coord_names.extend(n.coord_names.iter().cloned());
            } else if dim == 1 {
                coord_names.push(n.name.clone());
            } else {
                coord_names.extend((1..=dim).map(|c| format!("{}.{c}", n.name)));
            }
        }

        let mut param_names = Vec::new();
        let mut param_values = Vec::new();
        for (name, v) in &self.params {
            if param_names.contains(name) {
                return Err(NetworkError::DuplicateParam(name.clone()));
            }
            param_names.push(name.clone());
            param_values.push(*v);
        }

        let mut clock_names = Vec::new();
        for name in &self.clocks {
            if clock_names.contains(name) {
                return Err(NetworkError::DuplicateClock(name.clone()));
            }
            clock_names.push(name.clone());
        }

        let decls = Declarations::new(
            phase.node_dims().collect(),
            clock_names.clone(),
            param_names.clone(),
        );

        // Constraints: per node, indices must be exactly 1..=p_i.
        let mut constraint_counts = vec![0u32; k];
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for (node, index, region, frozen) in &self.constraints {
            let spec = ConstraintSpec::new(*node, *index, region.clone(), frozen.clone(), &decls)?;
            if constraints
                .iter()
                .any(|c: &ConstraintSpec| c.node == *node && c.index == *index)
            {
                return Err(NetworkError::DuplicateConstraint { node: *node, index: *index });
            }
            constraint_counts[*node] = constraint_counts[*node].max(*index);
            constraints.push(spec);
        }
        for node in 0..k {
            for index in 1..=constraint_counts[node] {
                if !constraints.iter().any(|c| c.node == node && c.index == index) {
                    return Err(NetworkError::ConstraintGap { node, index });
                }
            }
        }

        if self.structures.is_empty() {
            return Err(NetworkError::NoStructures);
        }
        let mut structure_names = Vec::new();
        let mut structures = Vec::new();
        for (name, s) in &self.structures {
            if structure_names.contains(name) {
                return Err(NetworkError::DuplicateStructure(name.clone()));
            }
            if s.node_count() != k {
                return Err(NetworkError::StructureSize {
                    name: name.clone(),
                    got: s.node_count(),
                    want: k,
                });
            }
            for node in 0..k {
                let index = s.constraint_index(node);
                if index > constraint_counts[node] {
                    return Err(NetworkError::UnknownConstraint {
                        name: name.clone(),
                        node,
                        index,
                    });
                }
            }
            if let Some(prev) = structures.iter().position(|p| p == s) {
                return Err(NetworkError::DuplicateMatrix(
                    structure_names[prev].clone(),
                    name.clone(),
                ));
            }
            structure_names.push(name.clone());
            structures.push(s.clone());
        }

        let mut fields = Vec::with_capacity(structures.len());
        for (i, f) in self.fields.iter().enumerate() {
            let (components, rates) = f
                .as_ref()
                .ok_or_else(|| NetworkError::MissingField(structure_names[i].clone()))?;
            let spec = VectorFieldSpec::new(components.clone(), rates.clone(), &decls).map_err(
                |source| NetworkError::Field { name: structure_names[i].clone(), source },
            )?;
            fields.push(spec);
        }

        let default = self.default.ok_or(NetworkError::NoEventMap)?;
        let event_map = EventMapSpec::new(self.rules, default, &decls, structures.len())?;

        let termination = match self.termination {
            None => None,
            Some(p) => {
                let bound = p.bind(&decls).map_err(NetworkError::Termination)?;
                Some((p, bound))
            }
        };

        Ok(Network {
            name: self.name,
            phase,
            node_names,
            coord_names,
            constraint_counts,
            constraints,
            structure_names,
            structures,
            fields,
            event_map,
            clock_names,
            param_names,
            param_values,
            decls,
            termination,
        })
    }
}
