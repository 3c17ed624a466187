//! Event maps: piecewise-constant selection of a connection structure.
//!
//! An event map assigns to every network state one admissible connection
//! structure. It is specified as an ordered list of rules, each a predicate
//! over state coordinates and clocks plus a target structure; the first rule
//! whose predicate holds wins, and a default structure applies when none
//! does.
//!
//! Internally all comparison atoms appearing in rule predicates are interned
//! into a single table. This gives the integrator one flat list of guard
//! functions to watch for sign changes, and it is where *sticky* atoms live:
//! an atom marked sticky latches to `true` the first time it fires and stays
//! true for the rest of the run (the fired set is part of the network state,
//! so restarted runs agree with uninterrupted ones). Sticky atoms model
//! one-way events such as protection trips.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::connection::AlphaId;
use crate::expr::{
    BindError, BoundAtom, BoundExpr, Declarations, Deps, EvalCtx, EvalError, Pred, PredShape,
};

/// One rule of an event map: `when` holds (first match in rule order) means
/// the network runs under `target`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRule {
    pub when: Pred,
    pub target: AlphaId,
    /// Atoms of `when` latch true once fired, for the rest of the run.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sticky: bool,
}

impl EventRule {
    pub fn new(when: Pred, target: AlphaId) -> Self {
        EventRule { when, target, sticky: false }
    }

    pub fn sticky(when: Pred, target: AlphaId) -> Self {
        EventRule { when, target, sticky: true }
    }
}

/// Errors building an event map.
#[derive(Debug, thiserror::Error)]
pub enum EventMapError {
    #[error("rule {rule}: {source}")]
    Bind {
        rule: usize,
        #[source]
        source: BindError,
    },
    #[error("rule {rule} targets structure {target} but only {count} structures exist")]
    TargetOutOfRange { rule: usize, target: AlphaId, count: usize },
    #[error("default targets structure {target} but only {count} structures exist")]
    DefaultOutOfRange { target: AlphaId, count: usize },
    #[error("structure {target} is unreachable: no rule or default selects it")]
    Unreachable { target: AlphaId },
}

/// A guard atom interned from the rule predicates: the scalar residual `g`
/// with its comparison, plus bookkeeping the integrator and checkers need.
#[derive(Debug, Clone)]
pub struct EventAtom {
    pub atom: BoundAtom,
    /// Latches true once fired; remains true for the rest of the run.
    pub sticky: bool,
    /// The residual depends on clocks only (no state coordinates), so a
    /// firing of this atom is a clock-threshold event.
    pub clock_only: bool,
}

/// A compiled event map: interned atoms, rules as boolean skeletons over
/// atom ids, and a default structure.
#[derive(Debug, Clone)]
pub struct EventMapSpec {
    atoms: Vec<EventAtom>,
    rules: Vec<EventRule>,
    shapes: Vec<PredShape>,
    default: AlphaId,
}

/// Result of evaluating an event map at one state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub alpha: AlphaId,
    /// Index of the matched rule; `None` means the default applied.
    pub rule: Option<usize>,
}

impl EventMapSpec {
    /// Compile rules against the declarations. `structure_count` bounds the
    /// valid targets; every structure must be selectable by some rule or the
    /// default (the event map must cover the whole admissible set).
    pub fn new(
        rules: Vec<EventRule>,
        default: AlphaId,
        decls: &Declarations,
        structure_count: usize,
    ) -> Result<Self, EventMapError> {
        if default.0 >= structure_count {
            return Err(EventMapError::DefaultOutOfRange { target: default, count: structure_count });
        }
        let mut atoms: Vec<EventAtom> = Vec::new();
        let mut shapes = Vec::with_capacity(rules.len());
        for (ri, rule) in rules.iter().enumerate() {
            if rule.target.0 >= structure_count {
                return Err(EventMapError::TargetOutOfRange {
                    rule: ri,
                    target: rule.target,
                    count: structure_count,
                });
            }
            let bound = rule
                .when
                .bind(decls)
                .map_err(|source| EventMapError::Bind { rule: ri, source })?;
            let sticky = rule.sticky;
            let shape = bound.shape(&mut |atom: &BoundAtom| {
                // Intern by residual program + comparison; sticky is a
                // union across rules sharing the atom.
                if let Some(i) = atoms
                    .iter()
                    .position(|e| e.atom.op == atom.op && e.atom.g == atom.g)
                {
                    if sticky {
                        atoms[i].sticky = true;
                    }
                    return i;
                }
                let deps = atom.g.deps();
                let clock_only = deps.coords.is_empty() && !deps.clocks.is_empty();
                atoms.push(EventAtom { atom: atom.clone(), sticky, clock_only });
                atoms.len() - 1
            });
            shapes.push(shape);
        }
        let spec = EventMapSpec { atoms, rules, shapes, default };
        // Surjectivity over the admissible set: every structure reachable.
        for target in 0..structure_count {
            let id = AlphaId(target);
            let hit = id == spec.default || spec.rules.iter().any(|r| r.target == id);
            if !hit {
                return Err(EventMapError::Unreachable { target: id });
            }
        }
        Ok(spec)
    }

    pub fn rules(&self) -> &[EventRule] {
        &self.rules
    }

    pub fn default_target(&self) -> AlphaId {
        self.default
    }

    pub fn atoms(&self) -> &[EventAtom] {
        &self.atoms
    }

    /// Boolean skeleton of rule `ri` over interned atom ids.
    pub fn rule_shape(&self, ri: usize) -> &PredShape {
        &self.shapes[ri]
    }

    /// Union of dependencies across all rule predicates.
    pub fn deps(&self) -> Deps {
        let mut deps = Deps::default();
        for a in &self.atoms {
            deps.union_with(a.atom.g.deps());
        }
        deps
    }

    /// Raw truth of atom `i` at `ctx` ignoring stickiness.
    pub fn atom_truth(&self, i: usize, ctx: &EvalCtx, eps: f64) -> Result<bool, EvalError> {
        let a = &self.atoms[i];
        let g = a.atom.g.eval(ctx)?;
        Ok(a.atom.op.holds(g, eps))
    }

    /// Residual value of atom `i` at `ctx` (for sign-change bracketing).
    pub fn atom_residual(&self, i: usize, ctx: &EvalCtx) -> Result<f64, EvalError> {
        self.atoms[i].atom.g.eval(ctx)
    }

    /// Residual program of atom `i` (for snapping analysis).
    pub fn atom_expr(&self, i: usize) -> &BoundExpr {
        &self.atoms[i].atom.g
    }

    /// Evaluate the event map: first rule whose predicate holds, else the
    /// default. Sticky atoms in `fired` count as true regardless of state.
    pub fn eval(
        &self,
        ctx: &EvalCtx,
        eps: f64,
        fired: &BTreeSet<usize>,
    ) -> Result<Selection, EvalError> {
        let mut memo: Vec<Option<bool>> = vec![None; self.atoms.len()];
        for (ri, rule) in self.rules.iter().enumerate() {
            let hit = self.shapes[ri].eval(&mut |i| {
                if let Some(v) = memo[i] {
                    return Ok(v);
                }
                let v = if self.atoms[i].sticky && fired.contains(&i) {
                    true
                } else {
                    self.atom_truth(i, ctx, eps)?
                };
                memo[i] = Some(v);
                Ok(v)
            })?;
            if hit {
                return Ok(Selection { alpha: rule.target, rule: Some(ri) });
            }
        }
        Ok(Selection { alpha: self.default, rule: None })
    }

    /// Sticky atoms that are true at `ctx` but not yet in `fired`: the ids
    /// the integrator must latch after stepping onto this state.
    pub fn newly_fired(
        &self,
        ctx: &EvalCtx,
        eps: f64,
        fired: &BTreeSet<usize>,
    ) -> Result<Vec<usize>, EvalError> {
        let mut out = Vec::new();
        for (i, a) in self.atoms.iter().enumerate() {
            if a.sticky && !fired.contains(&i) && self.atom_truth(i, ctx, eps)? {
                out.push(i);
            }
        }
        Ok(out)
    }
}
